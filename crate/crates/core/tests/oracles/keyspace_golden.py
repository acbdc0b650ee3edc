# Independent reference for the keyspace golden vectors.
# Requires the `cryptography` package.
import hashlib, struct
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms


def keystream_words(key):
    enc = Cipher(algorithms.ChaCha20(key, b"\x00" * 16), mode=None).encryptor()
    while True:
        block = enc.update(b"\x00" * 64)
        for i in range(0, 64, 8):
            yield struct.unpack("<Q", block[i:i + 8])[0]


def permutation(digest, d):
    words = keystream_words(digest)
    p = list(range(d))
    for i in range(d - 1, 0, -1):
        n = i + 1
        rem = (2**64) % n
        while True:
            x = next(words)
            if x < 2**64 - rem:
                break
        j = x % n
        p[i], p[j] = p[j], p[i]
    return p


abc = hashlib.sha256(b"abc").digest()
print("abc/8", permutation(abc, 8))
print("abc/1000 head", permutation(abc, 1000)[:10])
w = hashlib.sha256(hashlib.sha256(b"trojan").digest() + b"\x00").digest()
print("trojan layer1 weights/12", permutation(w, 12))

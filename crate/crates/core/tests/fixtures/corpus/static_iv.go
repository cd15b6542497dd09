package store

import (
	"crypto/aes"
	"crypto/cipher"
)

func Seal(key, plain []byte) []byte {
	block, _ := aes.NewCipher(key)
	iv := []byte("0000000000000000")
	out := make([]byte, len(plain))
	cipher.NewCTR(block, iv).XORKeyStream(out, plain)
	return out
}

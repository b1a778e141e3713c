// Answer envelope handling: base64 wire form is nonce(12) || tag(16) || ciphertext.
// Decryption happens here, in the client, with the user's key; WebCrypto's
// AES-GCM wants ciphertext||tag, so the fields are reassembled accordingly.

export const NONCE_BYTES = 12;
export const TAG_BYTES = 16;

export interface Envelope {
  nonce: Uint8Array;
  tag: Uint8Array;
  ciphertext: Uint8Array;
}

export class AuthenticationFailure extends Error {}

export function fromBase64(text: string): Uint8Array {
  const binary = atob(text.trim());
  const out = new Uint8Array(binary.length);
  for (let i = 0; i < binary.length; i++) out[i] = binary.charCodeAt(i);
  return out;
}

export function splitEnvelope(raw: Uint8Array): Envelope {
  if (raw.length < NONCE_BYTES + TAG_BYTES) {
    throw new AuthenticationFailure("answer too short to contain nonce and tag");
  }
  return {
    nonce: raw.slice(0, NONCE_BYTES),
    tag: raw.slice(NONCE_BYTES, NONCE_BYTES + TAG_BYTES),
    ciphertext: raw.slice(NONCE_BYTES + TAG_BYTES),
  };
}

export function keyFromHex(hex: string): Uint8Array {
  const clean = hex.trim().toLowerCase();
  if (!/^[0-9a-f]{64}$/.test(clean)) {
    throw new Error("key must be 64 hex characters (256 bits)");
  }
  const out = new Uint8Array(32);
  for (let i = 0; i < 32; i++) {
    out[i] = parseInt(clean.slice(2 * i, 2 * i + 2), 16);
  }
  return out;
}

export async function importKey(raw: Uint8Array): Promise<CryptoKey> {
  return crypto.subtle.importKey("raw", raw as BufferSource, "AES-GCM", false, ["decrypt"]);
}

export async function decryptAnswer(answerB64: string, key: CryptoKey): Promise<unknown> {
  const { nonce, tag, ciphertext } = splitEnvelope(fromBase64(answerB64));
  const sealed = new Uint8Array(ciphertext.length + tag.length);
  sealed.set(ciphertext, 0);
  sealed.set(tag, ciphertext.length);
  let plain: ArrayBuffer;
  try {
    plain = await crypto.subtle.decrypt(
      { name: "AES-GCM", iv: nonce as BufferSource }, key, sealed as BufferSource);
  } catch {
    throw new AuthenticationFailure("wrong key or tampered answer");
  }
  return JSON.parse(new TextDecoder().decode(plain));
}

import { describe, expect, it } from "vitest";
import {
  AuthenticationFailure, decryptAnswer, fromBase64, importKey, keyFromHex, splitEnvelope,
} from "../src/envelope.js";

// Frozen fixture produced by the server-side sealer: wire form is
// nonce(12) || tag(16) || ciphertext, base64-encoded.
const FIXTURE_KEY_HEX =
  "000102030405060708090a0b0c0d0e0f101112131415161718191a1b1c1d1e1f";
const FIXTURE_ANSWER_B64 =
  "ZGVmZ2hpamtsbW5v0CUiNHXc5PQRkNAV63u8LTM5vxYJmznmVw8+nL9HUJsjrnVvp06QHdK/2GrBkY" +
  "lq+YYkpW4ouWGFkhtL327ooGt5osVTLy1NmYWO+s3zyv17ruFVrWlIfOYNgi9iqAu9RgsvFovn/vX9" +
  "rBrmD3oqc7RA71IQb8sH3pixqdEvgrMAWLE9nFWbQNsdsYvuyVXrEOzhxQtdLljrcy0n+rB+uM320X" +
  "V8ftu+E+JPb9pKl9ajbAt+4+/D2jBs/IqR";

describe("keyFromHex", () => {
  it("parses 64 hex chars into 32 bytes", () => {
    const key = keyFromHex(FIXTURE_KEY_HEX);
    expect(key.length).toBe(32);
    expect(key[0]).toBe(0);
    expect(key[31]).toBe(31);
  });

  it("rejects malformed keys", () => {
    expect(() => keyFromHex("abc")).toThrow();
    expect(() => keyFromHex("zz".repeat(32))).toThrow();
  });
});

describe("splitEnvelope", () => {
  it("slices nonce, tag, ciphertext in wire order", () => {
    const raw = fromBase64(FIXTURE_ANSWER_B64);
    const env = splitEnvelope(raw);
    expect(env.nonce.length).toBe(12);
    expect(env.tag.length).toBe(16);
    expect(env.ciphertext.length).toBe(raw.length - 28);
    // the fixture nonce is the byte run 100..111
    expect([...env.nonce]).toEqual([100, 101, 102, 103, 104, 105, 106, 107, 108, 109, 110, 111]);
  });

  it("rejects a truncated envelope", () => {
    expect(() => splitEnvelope(new Uint8Array(10))).toThrow(AuthenticationFailure);
  });
});

describe("decryptAnswer", () => {
  it("opens the server-sealed fixture", async () => {
    const key = await importKey(keyFromHex(FIXTURE_KEY_HEX));
    const payload = (await decryptAnswer(FIXTURE_ANSWER_B64, key)) as {
      op: string; count: number; rows: { tid: number }[]; symbols: Record<string, number[]>;
    };
    expect(payload.op).toBe("select");
    expect(payload.count).toBe(2);
    expect(payload.rows.map((r) => r.tid)).toEqual([1, 4]);
    expect(payload.symbols["s0"]).toEqual([1, 3, 5]);
  });

  it("rejects the wrong key", async () => {
    const wrong = await importKey(new Uint8Array(32));
    await expect(decryptAnswer(FIXTURE_ANSWER_B64, wrong))
      .rejects.toThrow(AuthenticationFailure);
  });

  it("rejects any single-byte tamper", async () => {
    const key = await importKey(keyFromHex(FIXTURE_KEY_HEX));
    const raw = fromBase64(FIXTURE_ANSWER_B64);
    for (const pos of [0, 11, 12, 27, 28, raw.length - 1]) {
      const mutated = new Uint8Array(raw);
      mutated[pos] ^= 0x01;
      const b64 = btoa(String.fromCharCode(...mutated));
      await expect(decryptAnswer(b64, key)).rejects.toThrow(AuthenticationFailure);
    }
  });

  it("round-trips a locally sealed payload", async () => {
    const rawKey = crypto.getRandomValues(new Uint8Array(32));
    const sealKey = await crypto.subtle.importKey(
      "raw", rawKey, "AES-GCM", false, ["encrypt"]);
    const nonce = crypto.getRandomValues(new Uint8Array(12));
    const body = new TextEncoder().encode(JSON.stringify({ hello: [1, 2, 3] }));
    const sealed = new Uint8Array(
      await crypto.subtle.encrypt({ name: "AES-GCM", iv: nonce }, sealKey, body));
    // WebCrypto emits ciphertext||tag; rebuild the wire order nonce||tag||ct
    const tag = sealed.slice(sealed.length - 16);
    const ct = sealed.slice(0, sealed.length - 16);
    const wire = new Uint8Array(12 + 16 + ct.length);
    wire.set(nonce, 0);
    wire.set(tag, 12);
    wire.set(ct, 28);
    const b64 = btoa(String.fromCharCode(...wire));
    const key = await importKey(rawKey);
    expect(await decryptAnswer(b64, key)).toEqual({ hello: [1, 2, 3] });
  });
});

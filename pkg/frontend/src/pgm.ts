/**
 * Binary PGM (P5) encoding/decoding for sketch bitmaps.
 *
 * The service exchanges sketches as 64x64 binary PGMs with maxval 255;
 * the canvas editor works on the raw byte grid so an unedited round
 * trip is bit-exact.
 */

export interface Bitmap {
  width: number;
  height: number;
  /** row-major grayscale bytes, row 0 at the top */
  pixels: Uint8Array;
}

export function decodePgm(data: Uint8Array): Bitmap {
  if (data.length < 2 || data[0] !== 0x50 || data[1] !== 0x35) {
    throw new Error("not a binary PGM (missing P5 magic)");
  }
  const tokens: number[] = [];
  let i = 2;
  while (tokens.length < 3) {
    while (i < data.length && isSpace(data[i])) i++;
    if (i < data.length && data[i] === 0x23 /* # */) {
      while (i < data.length && data[i] !== 0x0a) i++;
      continue;
    }
    let j = i;
    while (j < data.length && !isSpace(data[j])) j++;
    if (j === i) throw new Error("truncated PGM header");
    const token = Number(textOf(data, i, j));
    if (!Number.isFinite(token)) throw new Error("bad PGM header token");
    tokens.push(token);
    i = j;
  }
  i++; // single whitespace byte after maxval
  const [width, height, maxval] = tokens;
  if (maxval !== 255) throw new Error(`unsupported maxval ${maxval}`);
  if (data.length - i !== width * height) {
    throw new Error(`expected ${width * height} pixel bytes, got ${data.length - i}`);
  }
  return { width, height, pixels: data.slice(i) };
}

export function encodePgm(bitmap: Bitmap): Uint8Array {
  const header = `P5\n${bitmap.width} ${bitmap.height}\n255\n`;
  const head = new TextEncoder().encode(header);
  const out = new Uint8Array(head.length + bitmap.pixels.length);
  out.set(head, 0);
  out.set(bitmap.pixels, head.length);
  return out;
}

export function bitmapsEqual(a: Bitmap, b: Bitmap): boolean {
  if (a.width !== b.width || a.height !== b.height) return false;
  for (let i = 0; i < a.pixels.length; i++) {
    if (a.pixels[i] !== b.pixels[i]) return false;
  }
  return true;
}

export function base64ToBytes(b64: string): Uint8Array {
  if (typeof atob === "function") {
    const raw = atob(b64);
    const out = new Uint8Array(raw.length);
    for (let i = 0; i < raw.length; i++) out[i] = raw.charCodeAt(i);
    return out;
  }
  return new Uint8Array(Buffer.from(b64, "base64"));
}

export function bytesToBase64(bytes: Uint8Array): string {
  if (typeof btoa === "function") {
    let s = "";
    for (const b of bytes) s += String.fromCharCode(b);
    return btoa(s);
  }
  return Buffer.from(bytes).toString("base64");
}

function isSpace(byte: number): boolean {
  return byte === 0x20 || byte === 0x09 || byte === 0x0a || byte === 0x0d;
}

function textOf(data: Uint8Array, from: number, to: number): string {
  return new TextDecoder().decode(data.subarray(from, to));
}

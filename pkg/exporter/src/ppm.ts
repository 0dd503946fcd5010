/**
 * Minimal binary PPM/PGM (P6/P5, maxval <= 255) decoder. Dependency-free
 * and fully deterministic, which is all the export pipeline needs from an
 * image format.
 */

export class ImageDecodeError extends Error {
  constructor(message: string, public path?: string) {
    super(path ? `${path}: ${message}` : message);
    this.name = 'ImageDecodeError';
  }
}

export interface DecodedImage {
  width: number;
  height: number;
  /** row-major RGB triples in [0, 1] */
  pixels: Float64Array;
}

function isSpace(byte: number): boolean {
  return byte === 0x20 || byte === 0x09 || byte === 0x0a || byte === 0x0d;
}

/** Reads the next header token, skipping whitespace and # comments. */
function nextToken(buf: Uint8Array, pos: number): { token: string; pos: number } {
  while (pos < buf.length) {
    if (isSpace(buf[pos])) {
      pos++;
    } else if (buf[pos] === 0x23) { // '#'
      while (pos < buf.length && buf[pos] !== 0x0a) pos++;
    } else {
      break;
    }
  }
  const start = pos;
  while (pos < buf.length && !isSpace(buf[pos])) pos++;
  return { token: new TextDecoder().decode(buf.subarray(start, pos)), pos };
}

export function decodePnm(data: Uint8Array, path?: string): DecodedImage {
  let { token: magic, pos } = nextToken(data, 0);
  if (magic !== 'P6' && magic !== 'P5') {
    throw new ImageDecodeError(`unsupported magic ${JSON.stringify(magic)}`, path);
  }
  const fields: number[] = [];
  for (let i = 0; i < 3; i++) {
    const r = nextToken(data, pos);
    pos = r.pos;
    const value = Number(r.token);
    if (!Number.isInteger(value) || value <= 0) {
      throw new ImageDecodeError(`bad header field ${JSON.stringify(r.token)}`, path);
    }
    fields.push(value);
  }
  const [width, height, maxval] = fields;
  if (maxval > 255) {
    throw new ImageDecodeError(`16-bit maxval ${maxval} not supported`, path);
  }
  pos += 1; // single whitespace byte after maxval
  const channels = magic === 'P6' ? 3 : 1;
  const need = width * height * channels;
  if (data.length - pos < need) {
    throw new ImageDecodeError(
      `truncated payload: ${data.length - pos} of ${need} bytes`, path);
  }
  const pixels = new Float64Array(width * height * 3);
  for (let i = 0; i < width * height; i++) {
    if (channels === 3) {
      pixels[3 * i] = data[pos + 3 * i] / maxval;
      pixels[3 * i + 1] = data[pos + 3 * i + 1] / maxval;
      pixels[3 * i + 2] = data[pos + 3 * i + 2] / maxval;
    } else {
      const g = data[pos + i] / maxval;
      pixels[3 * i] = g;
      pixels[3 * i + 1] = g;
      pixels[3 * i + 2] = g;
    }
  }
  return { width, height, pixels };
}

/** Encodes a P6 image; used by tests and fixture generators. */
export function encodeP6(width: number, height: number, rgb: Uint8Array): Uint8Array {
  if (rgb.length !== width * height * 3) {
    throw new ImageDecodeError(`payload ${rgb.length} != ${width * height * 3}`);
  }
  const header = new TextEncoder().encode(`P6\n${width} ${height}\n255\n`);
  const out = new Uint8Array(header.length + rgb.length);
  out.set(header, 0);
  out.set(rgb, header.length);
  return out;
}

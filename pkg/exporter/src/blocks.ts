/**
 * Tensor block writer for the suite interchange format: 16-byte header
 * (magic PTSH, version u16, rows u32, cols u32, dtype u16; 0 = float32)
 * followed by the little-endian row-major payload.
 */

const MAGIC = 'PTSH';
const VERSION = 1;

export function encodeTensorBlock(
  rows: number,
  cols: number,
  values: ArrayLike<number>,
): Uint8Array {
  if (values.length !== rows * cols) {
    throw new Error(`buffer of ${values.length} cannot be ${rows}x${cols}`);
  }
  const out = new Uint8Array(16 + 4 * rows * cols);
  const view = new DataView(out.buffer);
  for (let i = 0; i < 4; i++) out[i] = MAGIC.charCodeAt(i);
  view.setUint16(4, VERSION, true);
  view.setUint32(6, rows, true);
  view.setUint32(10, cols, true);
  view.setUint16(14, 0, true); // dtype float32
  for (let i = 0; i < values.length; i++) {
    view.setFloat32(16 + 4 * i, values[i], true);
  }
  return out;
}

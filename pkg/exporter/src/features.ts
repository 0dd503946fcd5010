/**
 * Image-side feature extraction: box-average the image onto a fixed cell
 * grid, project through the checkpoint's frozen weights, normalize.
 */

import { Checkpoint, imageProjection } from './checkpoint.js';
import { DecodedImage } from './ppm.js';

/** Per-cell RGB means, cell-major then channel: length grid*grid*3. */
export function gridAverages(img: DecodedImage, grid: number): Float64Array {
  const out = new Float64Array(grid * grid * 3);
  for (let gy = 0; gy < grid; gy++) {
    const y0 = Math.floor((img.height * gy) / grid);
    const y1 = Math.max(y0 + 1, Math.floor((img.height * (gy + 1)) / grid));
    for (let gx = 0; gx < grid; gx++) {
      const x0 = Math.floor((img.width * gx) / grid);
      const x1 = Math.max(x0 + 1, Math.floor((img.width * (gx + 1)) / grid));
      let r = 0.0, g = 0.0, b = 0.0;
      for (let y = y0; y < y1; y++) {
        for (let x = x0; x < x1; x++) {
          const p = 3 * (y * img.width + x);
          r += img.pixels[p];
          g += img.pixels[p + 1];
          b += img.pixels[p + 2];
        }
      }
      const count = (y1 - y0) * (x1 - x0);
      const cell = 3 * (gy * grid + gx);
      out[cell] = r / count;
      out[cell + 1] = g / count;
      out[cell + 2] = b / count;
    }
  }
  return out;
}

export class ImageFeatureExtractor {
  private proj: Float64Array;
  private dIn: number;

  constructor(private ckpt: Checkpoint) {
    this.proj = imageProjection(ckpt);
    this.dIn = ckpt.image_encoder.grid ** 2 * 3;
  }

  /** Unit-norm feature vector of width d_txt. */
  extract(img: DecodedImage): Float64Array {
    const cells = gridAverages(img, this.ckpt.image_encoder.grid);
    const dTxt = this.ckpt.d_txt;
    const out = new Float64Array(dTxt);
    for (let j = 0; j < dTxt; j++) {
      let acc = 0.0;
      for (let i = 0; i < this.dIn; i++) {
        acc += cells[i] * this.proj[i * dTxt + j];
      }
      out[j] = acc;
    }
    let norm = 0.0;
    for (let j = 0; j < dTxt; j++) norm += out[j] * out[j];
    norm = Math.sqrt(norm);
    if (norm === 0.0) {
      throw new Error('degenerate all-zero image feature');
    }
    for (let j = 0; j < dTxt; j++) out[j] /= norm;
    return out;
  }
}

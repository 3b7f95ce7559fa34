import type { PcaJson } from "./api.js";

/** Client-side mirror of the served PCA basis.
 *
 * `project` maps a latent to per-axis scores, `unproject` maps scores back to
 * a latent.  Because component rows are orthonormal, unproject∘project is the
 * identity on the PCA span for any k, and project∘unproject is always the
 * identity — mode switches in the explorer round-trip losslessly (up to
 * float32 rounding).
 */
export class Pca {
  readonly k: number;
  readonly dim: number;
  private readonly mean: Float64Array;
  private readonly components: Float64Array; // row-major, k x dim
  readonly sigma: Float64Array; // per-axis standard deviation, for slider ranges

  constructor(raw: PcaJson) {
    this.dim = raw.mean.length;
    this.k = raw.components.length;
    if (this.k < 1 || this.dim < 1) {
      throw new Error("PCA payload must have at least one component and dim");
    }
    this.mean = Float64Array.from(raw.mean);
    this.components = new Float64Array(this.k * this.dim);
    raw.components.forEach((row, j) => {
      if (row.length !== this.dim) {
        throw new Error(
          `PCA component ${j} has length ${row.length}, expected ${this.dim}`,
        );
      }
      this.components.set(row, j * this.dim);
    });
    this.sigma = Float64Array.from(raw.explained_variance, (v) =>
      Math.sqrt(Math.max(v, 0)),
    );
  }

  /** Scores of a latent along each component axis. */
  project(latent: ArrayLike<number>): Float32Array {
    if (latent.length !== this.dim) {
      throw new Error(`latent has length ${latent.length}, expected ${this.dim}`);
    }
    const scores = new Float32Array(this.k);
    for (let j = 0; j < this.k; j++) {
      let acc = 0;
      for (let i = 0; i < this.dim; i++) {
        acc += this.components[j * this.dim + i] * (latent[i] - this.mean[i]);
      }
      scores[j] = acc;
    }
    return scores;
  }

  /** Latent reconstructed from axis scores. */
  unproject(scores: ArrayLike<number>): Float32Array {
    if (scores.length !== this.k) {
      throw new Error(`scores has length ${scores.length}, expected ${this.k}`);
    }
    const latent = new Float32Array(this.dim);
    for (let i = 0; i < this.dim; i++) {
      let acc = this.mean[i];
      for (let j = 0; j < this.k; j++) {
        acc += this.components[j * this.dim + i] * scores[j];
      }
      latent[i] = acc;
    }
    return latent;
  }
}

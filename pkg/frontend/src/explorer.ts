import { Api, type RenderResult, type SessionInfo } from "./api.js";
import { Pca } from "./pca.js";

export type SliderMode = "raw" | "pca";

export interface TraversalPreset {
  axis: number;
  span: number;
  frames: number;
}

export interface ExplorerEvents {
  /** A new frame was displayed (render response or cached traversal frame). */
  onRender?: (result: RenderResult) => void;
  /** A request failed; show a toast.  Slider state is left untouched. */
  onError?: (message: string) => void;
  /** Mode/resolution/traversal state changed; refresh controls. */
  onChange?: () => void;
}

export const DEBOUNCE_MS = 80;
export const REPLAY_FRAME_MS = 125;

interface Traversal {
  key: string;
  latents: Float32Array[];
  frames: RenderResult[];
  index: number;
  playing: boolean;
  complete: boolean;
}

function linspace(center: number, span: number, n: number): number[] {
  if (n === 1) return [center];
  const lo = center - span / 2;
  const step = span / (n - 1);
  return Array.from({ length: n }, (_, i) => lo + i * step);
}

/** Client state for one scene session: slider values over raw latent dims or
 * PCA axes, a debounced latest-wins render scheduler (at most one request in
 * flight), and traversal playback with a frame cache for instant replay.
 */
export class Explorer {
  readonly session: SessionInfo;
  readonly dim: number;
  readonly pca: Pca | null;

  mode: SliderMode = "raw";
  latent: Float32Array; // source of truth in raw mode; unproject(scores) in pca mode
  scores: Float32Array; // source of truth in pca mode
  resolution = 32;
  displayed: RenderResult | null = null;
  traversal: Traversal | null = null;

  private timer: ReturnType<typeof setTimeout> | null = null;
  private replayTimer: ReturnType<typeof setTimeout> | null = null;
  private lock: Promise<void> = Promise.resolve();
  private firePending = false;
  private fireAgain = false;

  constructor(
    private readonly api: Api,
    session: SessionInfo,
    latentPoseDim: number,
    private readonly events: ExplorerEvents = {},
    private readonly debounceMs: number = DEBOUNCE_MS,
  ) {
    this.session = session;
    this.dim = latentPoseDim;
    const base = session.base_latents[0];
    if (!base || base.length !== latentPoseDim) {
      throw new Error(
        `session base latent has length ${base?.length}, ` +
          `model wants ${latentPoseDim}`,
      );
    }
    this.latent = Float32Array.from(base);
    this.pca = session.pca ? new Pca(session.pca) : null;
    if (this.pca && this.pca.dim !== latentPoseDim) {
      throw new Error(
        `PCA dim ${this.pca.dim} does not match latent dim ${latentPoseDim}`,
      );
    }
    this.scores = this.pca ? this.pca.project(this.latent) : new Float32Array(0);
  }

  /** Number of slider axes in the current mode. */
  get axisCount(): number {
    return this.mode === "pca" ? (this.pca ? this.pca.k : 0) : this.dim;
  }

  /** Current value of a slider axis in the current mode. */
  axisValue(axis: number): number {
    return this.mode === "pca" ? this.scores[axis] : this.latent[axis];
  }

  setMode(mode: SliderMode): void {
    if (mode === this.mode) return;
    if (mode === "pca") {
      if (!this.pca) throw new Error("no PCA available for this session");
      this.scores = this.pca.project(this.latent);
      this.latent = this.pca.unproject(this.scores);
    }
    // pca -> raw keeps the latent as-is; it already equals unproject(scores).
    this.mode = mode;
    this.events.onChange?.();
  }

  /** Slider moved: update the value for `axis` in the current mode and
   * schedule a debounced render.
   */
  setAxis(axis: number, value: number): void {
    if (axis < 0 || axis >= this.axisCount) {
      throw new Error(`axis ${axis} out of range for ${this.mode} mode`);
    }
    if (this.mode === "pca") {
      this.scores[axis] = value;
      this.latent = (this.pca as Pca).unproject(this.scores);
    } else {
      this.latent[axis] = value;
    }
    this.scheduleRender();
  }

  /** Reset sliders to the session's base latent pose. */
  resetToBase(): void {
    this.latent = Float32Array.from(this.session.base_latents[0]);
    if (this.pca) this.scores = this.pca.project(this.latent);
    if (this.mode === "pca") this.latent = (this.pca as Pca).unproject(this.scores);
    this.scheduleRender();
    this.events.onChange?.();
  }

  setResolution(resolution: number): void {
    if (resolution === this.resolution) return;
    this.resolution = resolution;
    this.scheduleRender();
    this.events.onChange?.();
  }

  /** Debounce slider input; after the quiet period, render latest-wins. */
  private scheduleRender(): void {
    if (this.timer !== null) clearTimeout(this.timer);
    this.timer = setTimeout(() => {
      this.timer = null;
      void this.fire();
    }, this.debounceMs);
  }

  /** Issue at most one render at a time; if values changed while a request
   * was in flight, follow up with a single render of the latest value.
   */
  private async fire(): Promise<void> {
    if (this.firePending) {
      this.fireAgain = true;
      return;
    }
    this.firePending = true;
    try {
      do {
        this.fireAgain = false;
        const release = await this.acquire();
        try {
          if (this.latent.length !== this.dim) {
            throw new Error(
              `latent has length ${this.latent.length}, model wants ${this.dim}`,
            );
          }
          const latent = this.latent.slice(); // latest value at send time
          const result = await this.api.render(
            this.session.session_id,
            latent,
            this.resolution,
          );
          this.show(result);
        } catch (err) {
          this.events.onError?.(err instanceof Error ? err.message : String(err));
        } finally {
          release();
        }
      } while (this.fireAgain);
    } finally {
      this.firePending = false;
    }
  }

  /** FIFO lock shared by slider renders and traversal fetches so the client
   * never has more than one render request in flight.
   */
  private acquire(): Promise<() => void> {
    let release!: () => void;
    const prev = this.lock;
    this.lock = new Promise<void>((resolve) => {
      release = resolve;
    });
    return prev.then(() => release);
  }

  private show(result: RenderResult): void {
    this.displayed = result;
    this.events.onRender?.(result);
  }

  /** Latent vectors for each frame of a traversal along `axis`, sweeping the
   * current value ± span/2 with all other axes held fixed.
   */
  private planTraversal(preset: TraversalPreset): { key: string; latents: Float32Array[] } {
    const { axis, span, frames } = preset;
    if (!Number.isInteger(frames) || frames < 1) {
      throw new Error(`frames must be a positive integer, got ${frames}`);
    }
    if (axis < 0 || axis >= this.axisCount) {
      throw new Error(`axis ${axis} out of range for ${this.mode} mode`);
    }
    const values = linspace(this.axisValue(axis), span, frames);
    const latents = values.map((v) => {
      if (this.mode === "pca") {
        const scores = this.scores.slice();
        scores[axis] = v;
        return (this.pca as Pca).unproject(scores);
      }
      const latent = this.latent.slice();
      latent[axis] = v;
      return latent;
    });
    const key = JSON.stringify({
      resolution: this.resolution,
      latents: latents.map((l) => Array.from(l)),
    });
    return { key, latents };
  }

  /** Play a traversal.  The first play fetches frames sequentially (each
   * displayed as it arrives); an identical replay animates from the cache
   * with zero network requests.  Resolves when playback has been started
   * (replay) or all frames fetched (first play).
   */
  async playTraversal(preset: TraversalPreset): Promise<void> {
    const plan = this.planTraversal(preset);
    this.stopReplay();
    if (this.traversal && this.traversal.complete && this.traversal.key === plan.key) {
      this.traversal.index = 0;
      this.traversal.playing = true;
      this.events.onChange?.();
      this.replayStep();
      return;
    }
    const traversal: Traversal = {
      key: plan.key,
      latents: plan.latents,
      frames: [],
      index: 0,
      playing: true,
      complete: false,
    };
    this.traversal = traversal;
    this.events.onChange?.();
    for (let i = 0; i < plan.latents.length; i++) {
      const release = await this.acquire();
      try {
        const result = await this.api.render(
          this.session.session_id,
          plan.latents[i],
          this.resolution,
        );
        traversal.frames.push(result);
        traversal.index = i;
        this.show(result);
      } catch (err) {
        this.traversal = null;
        this.events.onError?.(err instanceof Error ? err.message : String(err));
        this.events.onChange?.();
        return;
      } finally {
        release();
      }
    }
    traversal.complete = true;
    traversal.playing = false;
    this.events.onChange?.();
  }

  /** Advance cached playback one frame per tick. */
  private replayStep(): void {
    const t = this.traversal;
    if (!t || !t.playing) return;
    this.show(t.frames[t.index]);
    if (t.index + 1 >= t.frames.length) {
      t.playing = false;
      this.events.onChange?.();
      return;
    }
    this.replayTimer = setTimeout(() => {
      t.index += 1;
      this.replayStep();
    }, REPLAY_FRAME_MS);
  }

  pause(): void {
    if (this.traversal) this.traversal.playing = false;
    this.stopReplay();
    this.events.onChange?.();
  }

  /** Jump the scrubber to a cached frame. */
  seek(index: number): void {
    const t = this.traversal;
    if (!t || !t.complete) return;
    if (index < 0 || index >= t.frames.length) {
      throw new Error(`frame ${index} out of range 0..${t.frames.length - 1}`);
    }
    this.pause();
    t.index = index;
    this.show(t.frames[index]);
  }

  private stopReplay(): void {
    if (this.replayTimer !== null) {
      clearTimeout(this.replayTimer);
      this.replayTimer = null;
    }
  }
}

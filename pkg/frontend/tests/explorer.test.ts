import { afterEach, beforeEach, describe, expect, it, vi } from "vitest";

import { Api } from "../src/api.js";
import { DEBOUNCE_MS, Explorer, type ExplorerEvents } from "../src/explorer.js";
import { Pca } from "../src/pca.js";
import { ScriptedServer, rotatedPca } from "./scripted_server.js";

interface Rig {
  server: ScriptedServer;
  explorer: Explorer;
  rendered: Float32Array[]; // latent echo of every displayed frame, in order
  errors: string[];
}

async function makeRig(withPca = true): Promise<Rig> {
  const server = new ScriptedServer(withPca ? rotatedPca() : null);
  const api = new Api(server.transport);
  const session = await api.createSession(7);
  const rendered: Float32Array[] = [];
  const errors: string[] = [];
  const events: ExplorerEvents = {
    onRender: (r) => rendered.push(r.latentEcho),
    onError: (m) => errors.push(m),
  };
  const explorer = new Explorer(api, session, 8, events);
  return { server, explorer, rendered, errors };
}

beforeEach(() => {
  vi.useFakeTimers();
});

afterEach(() => {
  vi.useRealTimers();
});

describe("debounced rendering", () => {
  it("coalesces a rapid burst into one request for the final value", async () => {
    const { server, explorer, rendered } = await makeRig();
    for (let i = 0; i < 10; i++) {
      explorer.setAxis(0, i / 10);
      await vi.advanceTimersByTimeAsync(5); // well inside the debounce window
    }
    expect(server.renderCalls()).toHaveLength(0);
    await vi.advanceTimersByTimeAsync(DEBOUNCE_MS + 10);
    expect(server.renderCalls()).toHaveLength(1);
    expect(rendered).toHaveLength(1);
    expect(rendered[0][0]).toBe(Math.fround(0.9));
  });

  it("issues one request per settled position, display matching the last", async () => {
    const { server, explorer, rendered } = await makeRig();
    const positions = [0.1, 0.2, 0.3, 0.4, 0.5];
    for (const v of positions) {
      explorer.setAxis(3, v);
      await vi.advanceTimersByTimeAsync(DEBOUNCE_MS + 20);
    }
    expect(server.renderCalls()).toHaveLength(positions.length);
    expect(rendered).toHaveLength(positions.length);
    expect(explorer.displayed?.latentEcho[3]).toBe(Math.fround(0.5));
  });

  it("keeps at most one render in flight; the latest value wins", async () => {
    const { server, explorer, rendered } = await makeRig();
    server.holdRenders();
    explorer.setAxis(0, 0.1);
    await vi.advanceTimersByTimeAsync(DEBOUNCE_MS + 10);
    expect(server.renderCalls()).toHaveLength(1); // request 1 parked server-side
    explorer.setAxis(0, 0.2);
    await vi.advanceTimersByTimeAsync(DEBOUNCE_MS + 10);
    explorer.setAxis(0, 0.3);
    await vi.advanceTimersByTimeAsync(DEBOUNCE_MS + 10);
    expect(server.renderCalls()).toHaveLength(1); // still just the one in flight
    server.release();
    await vi.advanceTimersByTimeAsync(1);
    server.release();
    await vi.advanceTimersByTimeAsync(1);
    expect(server.renderCalls()).toHaveLength(2); // 0.2 was skipped entirely
    expect(rendered.map((e) => e[0])).toEqual([
      Math.fround(0.1),
      Math.fround(0.3),
    ]);
  });

  it("surfaces server errors without corrupting state", async () => {
    const { server, explorer, rendered, errors } = await makeRig();
    server.failNextRenders = 1;
    explorer.setAxis(2, 0.5);
    await vi.advanceTimersByTimeAsync(DEBOUNCE_MS + 10);
    expect(errors).toEqual(["scripted failure"]);
    expect(rendered).toHaveLength(0);
    expect(explorer.latent[2]).toBe(Math.fround(0.5)); // slider value kept
    explorer.setAxis(2, 0.75);
    await vi.advanceTimersByTimeAsync(DEBOUNCE_MS + 10);
    expect(rendered).toHaveLength(1);
    expect(rendered[0][2]).toBe(Math.fround(0.75));
  });

  it("refuses to send a latent of the wrong length", async () => {
    const { server, explorer, errors } = await makeRig();
    explorer.latent = new Float32Array(7); // corrupted out from under us
    explorer.setAxis(0, 0.1);
    await vi.advanceTimersByTimeAsync(DEBOUNCE_MS + 10);
    expect(server.renderCalls()).toHaveLength(0);
    expect(errors).toHaveLength(1);
    expect(errors[0]).toMatch(/length 7/);
  });

  it("re-renders at the new resolution on 32→64 switches", async () => {
    const { server, explorer } = await makeRig();
    explorer.setResolution(64);
    await vi.advanceTimersByTimeAsync(DEBOUNCE_MS + 10);
    const calls = server.renderCalls();
    expect(calls).toHaveLength(1);
    expect((calls[0].body as any).height).toBe(64);
    expect((calls[0].body as any).width).toBe(64);
  });
});

describe("mode switches", () => {
  it("keeps the latent equal to unproject(scores) in pca mode", async () => {
    const { explorer } = await makeRig();
    explorer.setMode("pca");
    const pca = explorer.pca as Pca;
    expect(Array.from(explorer.latent)).toEqual(
      Array.from(pca.unproject(explorer.scores)),
    );
    explorer.setAxis(1, -0.4);
    expect(Array.from(explorer.latent)).toEqual(
      Array.from(pca.unproject(explorer.scores)),
    );
  });

  it("round-trips pca→raw→pca losslessly", async () => {
    const { explorer } = await makeRig();
    explorer.setMode("pca");
    explorer.setAxis(0, 0.8);
    const scores = explorer.scores.slice();
    explorer.setMode("raw");
    explorer.setMode("pca");
    for (let j = 0; j < scores.length; j++) {
      expect(Math.abs(explorer.scores[j] - scores[j])).toBeLessThan(1e-6);
    }
  });

  it("round-trips raw→pca→raw losslessly at full rank", async () => {
    const { explorer } = await makeRig();
    const latent = explorer.latent.slice();
    explorer.setMode("pca");
    explorer.setMode("raw");
    for (let i = 0; i < latent.length; i++) {
      expect(Math.abs(explorer.latent[i] - latent[i])).toBeLessThan(1e-6);
    }
  });

  it("rejects pca mode when the session has no PCA", async () => {
    const { explorer } = await makeRig(false);
    expect(() => explorer.setMode("pca")).toThrow(/no PCA/);
    expect(explorer.mode).toBe("raw");
  });
});

describe("traversal playback", () => {
  it("renders a single frame when frames=1", async () => {
    const { server, explorer, rendered } = await makeRig();
    await explorer.playTraversal({ axis: 0, span: 2, frames: 1 });
    expect(server.renderCalls()).toHaveLength(1);
    expect(rendered).toHaveLength(1);
    expect(rendered[0][0]).toBe(explorer.latent[0]); // center of the sweep
  });

  it("produces byte-identical frames when span=0", async () => {
    const { server, explorer } = await makeRig();
    await explorer.playTraversal({ axis: 2, span: 0, frames: 4 });
    expect(server.renderCalls()).toHaveLength(4);
    const frames = explorer.traversal!.frames;
    expect(frames).toHaveLength(4);
    for (const frame of frames.slice(1)) {
      expect(frame.png).toEqual(frames[0].png);
    }
  });

  it("replays an identical traversal from cache with zero new requests", async () => {
    const { server, explorer, rendered } = await makeRig();
    const preset = { axis: 1, span: 1.5, frames: 5 };
    await explorer.playTraversal(preset);
    const fetched = server.renderCalls().length;
    expect(fetched).toBe(5);
    const firstPass = rendered.map((e) => Array.from(e));

    await explorer.playTraversal(preset); // replay
    await vi.advanceTimersByTimeAsync(5000);
    expect(server.renderCalls()).toHaveLength(fetched); // cache only
    expect(rendered).toHaveLength(10);
    expect(rendered.slice(5).map((e) => Array.from(e))).toEqual(firstPass);
  });

  it("supports pause and seek on a cached traversal", async () => {
    const { explorer, rendered } = await makeRig();
    await explorer.playTraversal({ axis: 0, span: 2, frames: 5 });
    explorer.seek(3);
    expect(explorer.traversal!.index).toBe(3);
    expect(rendered.at(-1)![0]).toBe(explorer.traversal!.latents[3][0]);
    await explorer.playTraversal({ axis: 0, span: 2, frames: 5 });
    explorer.pause();
    const shown = rendered.length;
    await vi.advanceTimersByTimeAsync(5000);
    expect(rendered.length).toBe(shown); // playback stayed paused
  });

  it("sweeps the active axis center ± span/2", async () => {
    const { server, explorer } = await makeRig();
    explorer.setMode("pca");
    const center = explorer.scores[0];
    await explorer.playTraversal({ axis: 0, span: 2, frames: 3 });
    const pca = explorer.pca as Pca;
    const lo = center - 1; // span 2 → center ± 1, stepping by 1
    const expected = [0, 1, 2].map((i) => {
      const scores = explorer.scores.slice();
      scores[0] = lo + i;
      return Array.from(pca.unproject(scores));
    });
    const sent = server
      .renderCalls()
      .map((c) => (c.body as any).latent as number[]);
    expect(sent).toEqual(expected);
  });

  it("aborts the traversal and reports the error on a failed frame", async () => {
    const { server, explorer, errors } = await makeRig();
    server.failNextRenders = 1;
    await explorer.playTraversal({ axis: 0, span: 2, frames: 3 });
    expect(errors).toEqual(["scripted failure"]);
    expect(explorer.traversal).toBeNull();
  });

  it("rejects bad presets", async () => {
    const { explorer } = await makeRig();
    await expect(explorer.playTraversal({ axis: 0, span: 1, frames: 0 }))
      .rejects.toThrow(/frames/);
    await expect(explorer.playTraversal({ axis: 99, span: 1, frames: 3 }))
      .rejects.toThrow(/axis 99/);
  });
});

/** Scripted end-to-end drive of the mounted page: create a session, sweep a
 * PCA slider through five positions and check the five latest-wins renders
 * and their latent echoes, then play a span=0 traversal (byte-identical
 * frames) and replay it from cache with zero new requests.
 */
import { afterEach, beforeEach, describe, expect, it, vi } from "vitest";

import { Api } from "../src/api.js";
import { DEBOUNCE_MS } from "../src/explorer.js";
import { Pca } from "../src/pca.js";
import { mountExplorerUi, type UiHandles } from "../src/ui.js";
import { ScriptedServer, rotatedPca } from "./scripted_server.js";

function pca3() {
  const full = rotatedPca();
  return {
    mean: full.mean,
    components: full.components.slice(0, 3),
    explained_variance: full.explained_variance.slice(0, 3),
  };
}

interface Page {
  server: ScriptedServer;
  ui: UiHandles;
  root: HTMLElement;
}

async function openPage(server = new ScriptedServer(pca3())): Promise<Page> {
  const root = document.createElement("div");
  document.body.append(root);
  const ui = mountExplorerUi(root, new Api(server.transport));
  const seed = root.querySelector<HTMLInputElement>("#scene-seed")!;
  seed.value = "7";
  root.querySelector<HTMLButtonElement>("#create-session")!.click();
  await vi.advanceTimersByTimeAsync(1);
  return { server, ui, root };
}

function $(root: HTMLElement, selector: string): HTMLElement {
  const node = root.querySelector<HTMLElement>(selector);
  if (!node) throw new Error(`missing ${selector}`);
  return node;
}

beforeEach(() => {
  vi.useFakeTimers();
});

afterEach(() => {
  vi.useRealTimers();
  document.body.textContent = "";
});

describe("session bootstrap", () => {
  it("shows the session id, thumbnails, and one slider per latent dim", async () => {
    const { root } = await openPage();
    expect($(root, "#status").textContent).toContain("s000000");
    expect(root.querySelectorAll("img.thumb")).toHaveLength(5);
    expect(root.querySelectorAll("#sliders input[type=range]")).toHaveLength(8);
  });

  it("switching to pca mode rebuilds sliders over the PCA axes", async () => {
    const { root } = await openPage();
    const radio = $(root, "#mode-pca") as HTMLInputElement;
    radio.checked = true;
    radio.dispatchEvent(new Event("change"));
    expect(root.querySelectorAll("#sliders input[type=range]")).toHaveLength(3);
    expect($(root, "#sliders label").textContent).toBe("pc0");
  });

  it("disables the pca radio when the server has no fitted PCA", async () => {
    const { root } = await openPage(new ScriptedServer(null));
    expect(($(root, "#mode-pca") as HTMLInputElement).disabled).toBe(true);
  });
});

describe("scripted slider and traversal drive", () => {
  it("five slider positions → five latest-wins renders with matching echoes", async () => {
    const { server, ui, root } = await openPage();
    const radio = $(root, "#mode-pca") as HTMLInputElement;
    radio.checked = true;
    radio.dispatchEvent(new Event("change"));

    // Client-side slider math, computed independently of the app instance.
    const pca = new Pca(pca3());
    const base = Float32Array.from(server.baseLatents(7)[0]);
    const baseScores = pca.project(base);

    const slider = $(root, "#axis-0") as HTMLInputElement;
    const positions = [-1, -0.5, 0, 0.5, 1];
    for (const v of positions) {
      slider.value = String(v);
      slider.dispatchEvent(new Event("input"));
      await vi.advanceTimersByTimeAsync(DEBOUNCE_MS + 20);
    }

    expect(server.renderCalls()).toHaveLength(5);
    expect(ui.renderLog).toHaveLength(5);
    positions.forEach((v, i) => {
      const scores = baseScores.slice();
      scores[0] = v;
      const expected = Array.from(pca.unproject(scores));
      expect(ui.renderLog[i].echo).toEqual(expected);
    });
    // The displayed image is the most recent response's render.
    const img = $(root, "#render") as HTMLImageElement;
    expect(img.src).toBe(ui.renderLog.at(-1)!.src);
  });

  it("span=0 traversal renders byte-identical frames; replay hits the cache", async () => {
    const { server, ui } = await openPage();
    const explorer = ui.explorer!;
    await explorer.playTraversal({ axis: 0, span: 0, frames: 3 });

    expect(server.renderCalls()).toHaveLength(3);
    expect(ui.renderLog).toHaveLength(3);
    const srcs = ui.renderLog.map((f) => f.src);
    expect(new Set(srcs).size).toBe(1); // byte-identical PNGs, identical data URLs
    const frames = explorer.traversal!.frames;
    for (const frame of frames.slice(1)) {
      expect(frame.png).toEqual(frames[0].png);
    }

    const before = server.log.length;
    await explorer.playTraversal({ axis: 0, span: 0, frames: 3 });
    await vi.advanceTimersByTimeAsync(5000);
    expect(server.log).toHaveLength(before); // replay made zero requests
    expect(ui.renderLog).toHaveLength(6);
    expect(ui.renderLog.slice(3).map((f) => f.src)).toEqual(srcs);
  });

  it("enables the scrubber after a traversal and seeks cached frames", async () => {
    const { ui, root } = await openPage();
    const scrubber = $(root, "#scrubber") as HTMLInputElement;
    expect(scrubber.disabled).toBe(true);
    await ui.explorer!.playTraversal({ axis: 1, span: 1, frames: 4 });
    expect(scrubber.disabled).toBe(false);
    expect(scrubber.max).toBe("3");
    scrubber.value = "2";
    scrubber.dispatchEvent(new Event("input"));
    expect(ui.explorer!.traversal!.index).toBe(2);
    expect(ui.renderLog.at(-1)!.echo).toEqual(
      Array.from(ui.explorer!.traversal!.frames[2].latentEcho),
    );
  });
});

describe("error handling", () => {
  it("shows a toast on a server error and keeps sliders usable", async () => {
    const { server, ui, root } = await openPage();
    server.failNextRenders = 1;
    const slider = $(root, "#axis-0") as HTMLInputElement;
    slider.value = "0.5";
    slider.dispatchEvent(new Event("input"));
    await vi.advanceTimersByTimeAsync(DEBOUNCE_MS + 20);

    const toast = $(root, "#toast");
    expect(toast.hidden).toBe(false);
    expect(toast.textContent).toBe("scripted failure");
    expect((slider as HTMLInputElement).disabled).toBe(false);

    slider.value = "0.25";
    slider.dispatchEvent(new Event("input"));
    await vi.advanceTimersByTimeAsync(DEBOUNCE_MS + 20);
    expect(ui.renderLog).toHaveLength(1);
    expect(ui.renderLog[0].echo[0]).toBe(Math.fround(0.25));

    await vi.advanceTimersByTimeAsync(4000);
    expect(toast.hidden).toBe(true); // toast clears itself
  });

  it("surfaces transport failures (server down) as a toast", async () => {
    const server = new ScriptedServer(pca3());
    let down = false;
    const root = document.createElement("div");
    document.body.append(root);
    const ui = mountExplorerUi(
      root,
      new Api((path, init) =>
        down
          ? Promise.reject(new TypeError("fetch failed"))
          : server.transport(path, init),
      ),
    );
    await ui.createSession(3);
    down = true;
    ui.explorer!.setAxis(0, 0.1);
    await vi.advanceTimersByTimeAsync(DEBOUNCE_MS + 20);
    const toast = $(root, "#toast");
    expect(toast.hidden).toBe(false);
    expect(toast.textContent).toContain("fetch failed");
    expect(
      root.querySelectorAll("#sliders input[type=range]:disabled"),
    ).toHaveLength(0);
  });
});

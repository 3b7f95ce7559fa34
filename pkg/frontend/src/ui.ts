import { Api, type RenderResult } from "./api.js";
import { Explorer, type SliderMode, type TraversalPreset } from "./explorer.js";

export interface DisplayedFrame {
  src: string;
  echo: number[];
}

export interface UiHandles {
  root: HTMLElement;
  api: Api;
  explorer: Explorer | null;
  /** Most recent frames shown in the viewer, oldest first (bounded). */
  renderLog: DisplayedFrame[];
  createSession: (seed: number) => Promise<void>;
}

const RENDER_LOG_LIMIT = 64;
const TOAST_MS = 3000;
const RAW_RANGE = 3;
const PCA_SIGMA_RANGE = 3;

/** Traversal presets over the top PCA axes (axis order follows the strongest
 * camera-attribute correlations: height, rotation, distance).
 */
const PRESETS: { label: string; axis: number }[] = [
  { label: "Height", axis: 0 },
  { label: "Rotation", axis: 1 },
  { label: "Distance", axis: 2 },
];
const PRESET_FRAMES = 9;

function el<K extends keyof HTMLElementTagNameMap>(
  doc: Document,
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = doc.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function pngDataUrl(png: Uint8Array): string {
  let binary = "";
  for (let i = 0; i < png.length; i++) binary += String.fromCharCode(png[i]);
  return `data:image/png;base64,${btoa(binary)}`;
}

/** Build the explorer page under `root` and wire it to the API. */
export function mountExplorerUi(root: HTMLElement, api: Api): UiHandles {
  const doc = root.ownerDocument;
  root.textContent = "";

  const handles: UiHandles = {
    root,
    api,
    explorer: null,
    renderLog: [],
    createSession,
  };

  // -- static scaffold --------------------------------------------------
  const headerRow = el(doc, "div", "session-row");
  const seedInput = el(doc, "input") as HTMLInputElement;
  seedInput.type = "number";
  seedInput.value = "0";
  seedInput.id = "scene-seed";
  const createBtn = el(doc, "button", "", "New session") as HTMLButtonElement;
  createBtn.id = "create-session";
  const status = el(doc, "span", "status");
  status.id = "status";
  headerRow.append("Scene seed ", seedInput, createBtn, status);

  const toast = el(doc, "div", "toast");
  toast.id = "toast";
  toast.hidden = true;
  let toastTimer: ReturnType<typeof setTimeout> | null = null;

  const viewer = el(doc, "div", "viewer");
  const renderImg = el(doc, "img", "render") as HTMLImageElement;
  renderImg.id = "render";
  renderImg.alt = "rendered view";
  viewer.append(renderImg);

  const thumbs = el(doc, "div", "thumbs");
  thumbs.id = "thumbs";

  const controls = el(doc, "div", "controls");
  controls.id = "controls";
  controls.hidden = true;

  const modeRow = el(doc, "div", "mode-row");
  const modeInputs = new Map<SliderMode, HTMLInputElement>();
  for (const mode of ["raw", "pca"] as const) {
    const label = el(doc, "label", "", ` ${mode} `);
    const radio = el(doc, "input") as HTMLInputElement;
    radio.type = "radio";
    radio.name = "slider-mode";
    radio.value = mode;
    radio.id = `mode-${mode}`;
    label.prepend(radio);
    modeRow.append(label);
    modeInputs.set(mode, radio);
  }
  const resSelect = el(doc, "select") as HTMLSelectElement;
  resSelect.id = "resolution";
  for (const res of [32, 64]) {
    const opt = el(doc, "option", "", `${res}×${res}`) as HTMLOptionElement;
    opt.value = String(res);
    resSelect.append(opt);
  }
  modeRow.append(" render ", resSelect);

  const sliderBox = el(doc, "div", "sliders");
  sliderBox.id = "sliders";

  const traversalRow = el(doc, "div", "traversal-row");
  traversalRow.id = "traversal";
  const presetBtns: HTMLButtonElement[] = [];
  for (const preset of PRESETS) {
    const btn = el(doc, "button", "preset", preset.label) as HTMLButtonElement;
    btn.id = `preset-${preset.label.toLowerCase()}`;
    presetBtns.push(btn);
    traversalRow.append(btn);
  }
  const pauseBtn = el(doc, "button", "", "Pause") as HTMLButtonElement;
  pauseBtn.id = "pause";
  const scrubber = el(doc, "input") as HTMLInputElement;
  scrubber.type = "range";
  scrubber.id = "scrubber";
  scrubber.min = "0";
  scrubber.value = "0";
  scrubber.disabled = true;
  traversalRow.append(pauseBtn, scrubber);

  controls.append(modeRow, sliderBox, traversalRow);
  root.append(headerRow, toast, viewer, thumbs, controls);

  // -- behavior ---------------------------------------------------------
  function showToast(message: string): void {
    toast.textContent = message;
    toast.hidden = false;
    if (toastTimer !== null) clearTimeout(toastTimer);
    toastTimer = setTimeout(() => {
      toast.hidden = true;
      toastTimer = null;
    }, TOAST_MS);
  }

  function onRender(result: RenderResult): void {
    const src = pngDataUrl(result.png);
    renderImg.src = src;
    handles.renderLog.push({ src, echo: Array.from(result.latentEcho) });
    if (handles.renderLog.length > RENDER_LOG_LIMIT) handles.renderLog.shift();
  }

  function rebuildSliders(): void {
    const explorer = handles.explorer;
    if (!explorer) return;
    sliderBox.textContent = "";
    for (let axis = 0; axis < explorer.axisCount; axis++) {
      const row = el(doc, "div", "slider-row");
      const isPca = explorer.mode === "pca";
      const range = isPca
        ? Math.max((explorer.pca?.sigma[axis] ?? 0) * PCA_SIGMA_RANGE, 1e-3)
        : RAW_RANGE;
      const name = isPca ? `pc${axis}` : `z${axis}`;
      const label = el(doc, "label", "", name);
      label.htmlFor = `axis-${axis}`;
      const slider = el(doc, "input") as HTMLInputElement;
      slider.type = "range";
      slider.id = `axis-${axis}`;
      slider.min = String(-range);
      slider.max = String(range);
      slider.step = "any";
      slider.value = String(explorer.axisValue(axis));
      const value = el(doc, "span", "value", explorer.axisValue(axis).toFixed(3));
      slider.addEventListener("input", () => {
        const v = Number(slider.value);
        explorer.setAxis(axis, v);
        value.textContent = v.toFixed(3);
      });
      row.append(label, slider, value);
      sliderBox.append(row);
    }
  }

  function refreshControls(): void {
    const explorer = handles.explorer;
    if (!explorer) return;
    for (const [mode, radio] of modeInputs) radio.checked = mode === explorer.mode;
    modeInputs.get("pca")!.disabled = explorer.pca === null;
    resSelect.value = String(explorer.resolution);
    const t = explorer.traversal;
    scrubber.disabled = !t || !t.complete;
    if (t) {
      scrubber.max = String(Math.max(t.latents.length - 1, 0));
      scrubber.value = String(t.index);
    }
  }

  async function createSession(seed: number): Promise<void> {
    status.textContent = "creating session…";
    try {
      const [info, session] = await Promise.all([
        api.modelInfo(),
        api.createSession(seed),
      ]);
      const explorer = new Explorer(api, session, info.config.latent_pose_dim, {
        onRender,
        onError: showToast,
        onChange: () => {
          refreshControls();
        },
      });
      handles.explorer = explorer;
      thumbs.textContent = "";
      for (const url of session.input_view_urls) {
        const thumb = el(doc, "img", "thumb") as HTMLImageElement;
        thumb.src = url;
        thumb.alt = "input view";
        thumbs.append(thumb);
      }
      controls.hidden = false;
      status.textContent = `session ${session.session_id}`;
      rebuildSliders();
      refreshControls();
    } catch (err) {
      status.textContent = "";
      showToast(err instanceof Error ? err.message : String(err));
    }
  }

  createBtn.addEventListener("click", () => {
    void createSession(Number(seedInput.value));
  });

  for (const [mode, radio] of modeInputs) {
    radio.addEventListener("change", () => {
      const explorer = handles.explorer;
      if (!explorer || !radio.checked) return;
      try {
        explorer.setMode(mode);
      } catch (err) {
        showToast(err instanceof Error ? err.message : String(err));
        refreshControls();
        return;
      }
      rebuildSliders();
    });
  }

  resSelect.addEventListener("change", () => {
    handles.explorer?.setResolution(Number(resSelect.value));
  });

  PRESETS.forEach((preset, i) => {
    presetBtns[i].addEventListener("click", () => {
      const explorer = handles.explorer;
      if (!explorer) return;
      const sigma = explorer.pca?.sigma[preset.axis] ?? 1;
      const spec: TraversalPreset = {
        axis: preset.axis,
        span: 4 * sigma,
        frames: PRESET_FRAMES,
      };
      if (explorer.mode !== "pca") {
        showToast("switch to pca mode to play traversals");
        return;
      }
      void explorer.playTraversal(spec);
    });
  });

  pauseBtn.addEventListener("click", () => handles.explorer?.pause());

  scrubber.addEventListener("input", () => {
    handles.explorer?.seek(Number(scrubber.value));
  });

  return handles;
}

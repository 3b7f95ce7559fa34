/** Typed client for the /v1 JSON inference API.
 *
 * All calls go through an injectable transport with the `fetch` signature so
 * tests can script the server side without a network.
 */

export type Transport = (path: string, init?: RequestInit) => Promise<Response>;

export interface PcaJson {
  mean: number[];
  components: number[][];
  explained_variance: number[];
}

export interface SessionInfo {
  session_id: string;
  input_view_urls: string[];
  base_latents: number[][];
  pca?: PcaJson;
}

export interface ModelInfo {
  config: {
    latent_pose_dim: number;
    image_height: number;
    image_width: number;
    [key: string]: unknown;
  };
  checkpoint_hash: string;
  pca: boolean;
}

export interface RenderResult {
  /** PNG bytes exactly as served. */
  png: Uint8Array;
  /** The float32 latent the server actually rendered (from the echo header). */
  latentEcho: Float32Array;
}

export class ApiError extends Error {
  constructor(readonly status: number, detail: string) {
    super(detail);
    this.name = "ApiError";
  }
}

async function fail(resp: Response, path: string): Promise<never> {
  let detail = `${path} -> ${resp.status}`;
  try {
    const body: unknown = await resp.json();
    if (body && typeof (body as { detail?: unknown }).detail === "string") {
      detail = (body as { detail: string }).detail;
    }
  } catch {
    // non-JSON error body; keep the generic message
  }
  throw new ApiError(resp.status, detail);
}

const JSON_HEADERS = { "content-type": "application/json" };

export class Api {
  constructor(
    private readonly transport: Transport = (path, init) => fetch(path, init),
  ) {}

  async modelInfo(): Promise<ModelInfo> {
    const resp = await this.transport("/v1/model");
    if (!resp.ok) await fail(resp, "/v1/model");
    return (await resp.json()) as ModelInfo;
  }

  async createSession(sceneSeed: number): Promise<SessionInfo> {
    const resp = await this.transport("/v1/sessions", {
      method: "POST",
      headers: JSON_HEADERS,
      body: JSON.stringify({ scene_seed: sceneSeed }),
    });
    if (!resp.ok) await fail(resp, "/v1/sessions");
    return (await resp.json()) as SessionInfo;
  }

  async render(
    sessionId: string,
    latent: Float32Array,
    size: number,
  ): Promise<RenderResult> {
    const path = `/v1/sessions/${sessionId}/render`;
    const resp = await this.transport(path, {
      method: "POST",
      headers: JSON_HEADERS,
      body: JSON.stringify({
        latent: Array.from(latent),
        height: size,
        width: size,
      }),
    });
    if (!resp.ok) await fail(resp, path);
    const png = new Uint8Array(await resp.arrayBuffer());
    const echoText = resp.headers.get("x-latent-echo");
    const latentEcho = echoText
      ? Float32Array.from(JSON.parse(echoText) as number[])
      : latent.slice();
    return { png, latentEcho };
  }
}

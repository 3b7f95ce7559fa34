/** In-memory stand-in for the /v1 service: same routes, same validation,
 * deterministic bytes, full request log.  "PNG" bodies are deterministic
 * functions of (latent, height, width) so byte-identity assertions mean the
 * same thing they would against the real renderer.
 */
import type { PcaJson, Transport } from "../src/api.js";

export interface LoggedRequest {
  method: string;
  path: string;
  body?: unknown;
}

function jsonResp(payload: unknown, status = 200): Response {
  return new Response(JSON.stringify(payload), {
    status,
    headers: { "content-type": "application/json" },
  });
}

export class ScriptedServer {
  readonly dim = 8;
  readonly log: LoggedRequest[] = [];
  pcaJson: PcaJson | null;
  /** Number of upcoming render calls to fail with a 500. */
  failNextRenders = 0;
  private gates: Array<() => void> | null = null;
  private sessions = 0;

  constructor(pca: PcaJson | null = null) {
    this.pcaJson = pca;
  }

  /** Hold every render response until `release()` frees it (FIFO). */
  holdRenders(): void {
    this.gates = [];
  }

  release(): void {
    this.gates?.shift()?.();
  }

  pendingRenders(): number {
    return this.gates?.length ?? 0;
  }

  renderCalls(): LoggedRequest[] {
    return this.log.filter((r) => r.path.endsWith("/render"));
  }

  baseLatents(seed: number): number[][] {
    return Array.from({ length: 5 }, (_, v) =>
      Array.from({ length: this.dim }, (_, j) =>
        Math.fround(Math.sin(1 + seed * 97 + v * 11 + j) / 3),
      ),
    );
  }

  transport: Transport = async (path, init) => {
    const method = init?.method ?? "GET";
    const body =
      typeof init?.body === "string" ? (JSON.parse(init.body) as any) : undefined;
    this.log.push({ method, path, body });

    if (path === "/v1/model" && method === "GET") {
      return jsonResp({
        config: { latent_pose_dim: this.dim, image_height: 32, image_width: 32 },
        checkpoint_hash: "ab".repeat(32),
        pca: this.pcaJson !== null,
      });
    }

    if (path === "/v1/sessions" && method === "POST") {
      const seed = (body?.scene_seed as number) ?? 0;
      const id = `s${String(this.sessions++).padStart(6, "0")}`;
      const payload: Record<string, unknown> = {
        session_id: id,
        input_view_urls: Array.from(
          { length: 5 },
          (_, i) => `/v1/sessions/${id}/views/${i}`,
        ),
        base_latents: this.baseLatents(seed),
      };
      if (this.pcaJson) payload.pca = this.pcaJson;
      return jsonResp(payload);
    }

    const render = path.match(/^\/v1\/sessions\/([^/]+)\/render$/);
    if (render && method === "POST") {
      if (this.gates) {
        await new Promise<void>((resolve) => this.gates!.push(resolve));
      }
      if (this.failNextRenders > 0) {
        this.failNextRenders -= 1;
        return jsonResp({ detail: "scripted failure" }, 500);
      }
      const latent = body?.latent as number[] | undefined;
      if (!Array.isArray(latent) || latent.length !== this.dim) {
        return jsonResp({ detail: `latent must be a list of ${this.dim} numbers` }, 422);
      }
      const echo = latent.map((v) => Math.fround(v));
      const png = new TextEncoder().encode(
        `PNG|${body.height}x${body.width}|${JSON.stringify(echo)}`,
      );
      return new Response(png, {
        status: 200,
        headers: {
          "content-type": "image/png",
          "x-latent-echo": JSON.stringify(echo),
        },
      });
    }

    return jsonResp({ detail: `unknown ${method} ${path}` }, 404);
  };
}

/** PCA payload whose rows are signed unit vectors — exact float arithmetic. */
export function axisPca(axes: number[], dim = 8, mean?: number[]): PcaJson {
  return {
    mean: mean ?? Array.from({ length: dim }, () => 0),
    components: axes.map((a) => {
      const row = Array.from({ length: dim }, () => 0);
      row[Math.abs(a)] = a < 0 ? -1 : 1;
      return row;
    }),
    explained_variance: axes.map((_, j) => 1 / (j + 1)),
  };
}

/** Full-rank orthonormal basis built from 2x2 rotation blocks. */
export function rotatedPca(dim = 8, angle = Math.PI / 5): PcaJson {
  const c = Math.cos(angle);
  const s = Math.sin(angle);
  const components: number[][] = [];
  for (let b = 0; b < dim / 2; b++) {
    const row1 = Array.from({ length: dim }, () => 0);
    const row2 = Array.from({ length: dim }, () => 0);
    row1[2 * b] = c;
    row1[2 * b + 1] = s;
    row2[2 * b] = -s;
    row2[2 * b + 1] = c;
    components.push(row1, row2);
  }
  return {
    mean: Array.from({ length: dim }, (_, i) => Math.fround(0.1 * (i - 3))),
    components,
    explained_variance: components.map((_, j) => 1 / (j + 1)),
  };
}

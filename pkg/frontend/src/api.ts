/**
 * Thin typed client for the /api/v1 stylize service.
 *
 * The server never holds per-client state and identical requests return
 * byte-identical PNGs, so responses are safe to cache for as long as the
 * model hash stays the same.
 */

export interface HealthReport {
  status: "ready" | "loading" | "error";
  model_hash: string | null;
}

export interface ServiceConfig {
  model_hash: string;
  stage: number;
  alpha_range: [number, number];
  beta_range: [number, number];
  max_image_side: number;
  image_multiple: number;
  max_body_bytes: number;
}

export interface StylizeRequest {
  content_b64: string;
  style_b64: string;
  alpha: number;
  beta: number;
}

/** Error body shape the service uses for every non-2xx response. */
export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

/** The one call the controllers need; ApiClient is the real implementation. */
export interface StylizeApi {
  stylize(request: StylizeRequest): Promise<Uint8Array>;
}

export class ApiClient implements StylizeApi {
  constructor(
    private readonly baseUrl: string = "/api/v1",
    private readonly fetchImpl: FetchLike = (url, init) => fetch(url, init),
  ) {}

  async health(): Promise<HealthReport> {
    const resp = await this.fetchImpl(`${this.baseUrl}/health`);
    if (!resp.ok) throw await toApiError(resp);
    return (await resp.json()) as HealthReport;
  }

  async config(): Promise<ServiceConfig> {
    const resp = await this.fetchImpl(`${this.baseUrl}/config`);
    if (!resp.ok) throw await toApiError(resp);
    return (await resp.json()) as ServiceConfig;
  }

  /** POST one content/style pair; resolves to the PNG bytes. */
  async stylize(request: StylizeRequest): Promise<Uint8Array> {
    const resp = await this.fetchImpl(`${this.baseUrl}/stylize`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(request),
    });
    if (!resp.ok) throw await toApiError(resp);
    return new Uint8Array(await resp.arrayBuffer());
  }
}

async function toApiError(resp: Response): Promise<ApiError> {
  try {
    const body = (await resp.json()) as { code?: string; message?: string };
    return new ApiError(
      resp.status,
      body.code ?? "unknown",
      body.message ?? `request failed with status ${resp.status}`,
    );
  } catch {
    return new ApiError(resp.status, "unknown", `request failed with status ${resp.status}`);
  }
}

import type { ExpansionResponse, ServiceErrorBody, SessionInfo } from './types.js';

export class ApiError extends Error {
  constructor(public status: number, public stage: string, message: string) {
    super(message);
  }
}

async function parseError(resp: Response): Promise<ApiError> {
  let body: ServiceErrorBody | null = null;
  try {
    body = (await resp.json()) as ServiceErrorBody;
  } catch {
    // non-JSON error body
  }
  return new ApiError(resp.status, body?.stage ?? 'unknown',
                      body?.message ?? `HTTP ${resp.status}`);
}

/** Thin typed client for the annotation service; never computes masks itself. */
export class ServiceClient {
  constructor(private base: string = '') {}

  private url(path: string): string {
    return `${this.base}${path}`;
  }

  async createSession(body: unknown): Promise<SessionInfo> {
    const resp = await fetch(this.url('/api/sessions'), {
      method: 'POST',
      headers: { 'content-type': 'application/json' },
      body: JSON.stringify(body),
    });
    if (!resp.ok) throw await parseError(resp);
    return (await resp.json()) as SessionInfo;
  }

  async putSeeds(sessionId: string, geojson: unknown): Promise<number> {
    const resp = await fetch(this.url(`/api/sessions/${sessionId}/seeds`), {
      method: 'PUT',
      headers: { 'content-type': 'application/json' },
      body: JSON.stringify(geojson),
    });
    if (!resp.ok) throw await parseError(resp);
    const body = (await resp.json()) as { seed_pixels: number };
    return body.seed_pixels;
  }

  async getExpansion(sessionId: string, alpha: number, pc: number): Promise<ExpansionResponse> {
    const resp = await fetch(
      this.url(`/api/sessions/${sessionId}/expansion?alpha=${alpha}&pc=${pc}`));
    if (!resp.ok) throw await parseError(resp);
    return (await resp.json()) as ExpansionResponse;
  }

  async exportLabels(sessionId: string, alpha: number, pc: number): Promise<ArrayBuffer> {
    const resp = await fetch(
      this.url(`/api/sessions/${sessionId}/export?alpha=${alpha}&pc=${pc}`),
      { method: 'POST' });
    if (!resp.ok) throw await parseError(resp);
    return resp.arrayBuffer();
  }

  previewUrl(sessionId: string, layer: string, alpha: number, pc: number): string {
    return this.url(
      `/api/sessions/${sessionId}/preview.png?layer=${layer}&alpha=${alpha}&pc=${pc}`);
  }
}

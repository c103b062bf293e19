/** Typed client for the session JSON API. No image math happens here. */

export interface SessionResource {
  id: string;
  status: Record<string, "done" | "pending">;
  outputs: Record<string, string>;
  sampler: {
    seed: number;
    steps: number | null;
    trunc_s: number;
    coefficient_source: string;
  };
  edit_log: Array<{ stage: number; timestamp: number }>;
}

export interface OutputJson {
  shape: number[];
  data: number[];
}

export class ApiError extends Error {
  readonly status: number;

  constructor(status: number, detail: string) {
    super(`${status}: ${detail}`);
    this.status = status;
  }
}

async function request<T>(
  fetchFn: typeof fetch, path: string, init?: RequestInit,
): Promise<T> {
  let res: Response;
  try {
    res = await fetchFn(path, init);
  } catch (e) {
    throw new ApiError(0, `network failure: ${String(e)}`);
  }
  if (!res.ok) {
    let detail = res.statusText;
    try {
      const body = await res.json();
      if (body && typeof body.detail === "string") detail = body.detail;
    } catch {
      /* non-JSON error body */
    }
    throw new ApiError(res.status, detail);
  }
  return (await res.json()) as T;
}

export class ApiClient {
  private readonly fetchFn: typeof fetch;

  constructor(fetchFn: typeof fetch = fetch) {
    this.fetchFn = fetchFn;
  }

  createSession(body: {
    seed: number; pipeline?: number; steps?: number; trunc_s?: number;
  }): Promise<{ id: string }> {
    return request(this.fetchFn, "/sessions", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
  }

  getSession(id: string): Promise<SessionResource> {
    return request(this.fetchFn, `/sessions/${id}`);
  }

  runStage(id: string, stage: number): Promise<{ status: object }> {
    return request(this.fetchFn, `/sessions/${id}/stages/${stage}/run`, {
      method: "POST",
    });
  }

  getOutputJson(id: string, stage: number): Promise<OutputJson> {
    return request(
      this.fetchFn, `/sessions/${id}/stages/${stage}/output?format=json`);
  }

  outputPngUrl(id: string, stage: number): string {
    return `/sessions/${id}/stages/${stage}/output?format=png`;
  }

  putOutput(id: string, stage: number, pngBase64: string):
      Promise<{ status: object }> {
    return request(this.fetchFn, `/sessions/${id}/stages/${stage}/output`, {
      method: "PUT",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ png_base64: pngBase64 }),
    });
  }

  resume(id: string): Promise<{ stages_rerun: number; status: object }> {
    return request(this.fetchFn, `/sessions/${id}/resume`, {
      method: "POST",
    });
  }
}

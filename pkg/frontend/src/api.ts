// Thin fetch wrapper over the workflow API. No state, no recomputation:
// the server is authoritative for every derived number.

import type {
  CheckpointListing,
  DiffPayload,
  JobPayload,
  TrajectoryPayload,
  TransformationSummary,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    public status: number,
    public code: string,
    message: string,
  ) {
    super(message);
  }
}

async function request<T>(url: string, init?: RequestInit): Promise<T> {
  const response = await fetch(url, init);
  if (!response.ok) {
    let code = `http-${response.status}`;
    let message = response.statusText;
    try {
      const body = await response.json();
      code = body.code ?? code;
      message = body.message ?? JSON.stringify(body);
    } catch {
      // non-JSON error body; keep the status text
    }
    throw new ApiError(response.status, code, message);
  }
  return (await response.json()) as T;
}

export class Api {
  constructor(public baseUrl: string) {}

  private url(path: string): string {
    return `${this.baseUrl}${path}`;
  }

  listCheckpoints(): Promise<CheckpointListing> {
    return request(this.url("/api/checkpoints"));
  }

  trajectory(tip: string, referenceMs?: number): Promise<TrajectoryPayload> {
    const params = new URLSearchParams({ tip });
    if (referenceMs !== undefined) params.set("reference_ms", String(referenceMs));
    return request(this.url(`/api/trajectory?${params}`));
  }

  transformations(): Promise<{ transformations: TransformationSummary[] }> {
    return request(this.url("/api/transformations"));
  }

  diff(a: string, b: string): Promise<DiffPayload> {
    const params = new URLSearchParams({ a, b });
    return request(this.url(`/api/diff?${params}`));
  }

  submitTransform(checkpoint: string, name: string): Promise<{ job_id: string }> {
    return request(this.url(`/api/checkpoints/${checkpoint}/transform`), {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ name }),
    });
  }

  job(jobId: string): Promise<JobPayload> {
    return request(this.url(`/api/jobs/${jobId}`));
  }

  tag(name: string, id: string): Promise<{ name: string; id: string }> {
    return request(this.url("/api/refs"), {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ name, id }),
    });
  }
}

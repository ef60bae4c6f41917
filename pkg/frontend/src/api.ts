// Thin client over the documented REST endpoints. The portal holds no
// authoritative state: every view can be rebuilt from these calls.

import type { ExperimentListEntry, ExperimentStatus, SubmitResponse } from "./types.js";

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

export function buildQuery(params: Record<string, string | undefined>): string {
  const search = new URLSearchParams();
  for (const [key, value] of Object.entries(params)) {
    if (value) search.set(key, value);
  }
  const text = search.toString();
  return text ? `?${text}` : "";
}

async function toJson<T>(response: Response): Promise<T> {
  const body = await response.json().catch(() => ({}));
  if (!response.ok) {
    const detail = typeof body === "object" && body && "detail" in body
      ? JSON.stringify((body as { detail: unknown }).detail)
      : response.statusText;
    throw new ApiError(response.status, detail);
  }
  return body as T;
}

export class PortalApi {
  constructor(private base: string = "") {}

  submit(userRequest: string): Promise<SubmitResponse> {
    return fetch(`${this.base}/experiments`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ user_request: userRequest }),
    }).then((r) => toJson<SubmitResponse>(r));
  }

  clarify(token: string, answer: string): Promise<SubmitResponse> {
    return fetch(`${this.base}/experiments/clarify/${token}`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ answer_text: answer }),
    }).then((r) => toJson<SubmitResponse>(r));
  }

  status(experimentId: string): Promise<ExperimentStatus> {
    return fetch(`${this.base}/experiments/${experimentId}`).then((r) =>
      toJson<ExperimentStatus>(r),
    );
  }

  list(filters: Record<string, string | undefined> = {}): Promise<ExperimentListEntry[]> {
    return fetch(`${this.base}/experiments${buildQuery(filters)}`)
      .then((r) => toJson<{ experiments: ExperimentListEntry[] }>(r))
      .then((body) => body.experiments);
  }

  setAttenuation(experimentId: string, valueDb: number): Promise<unknown> {
    return fetch(`${this.base}/experiments/${experimentId}/attenuation`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ value_db: valueDb }),
    }).then((r) => toJson(r));
  }

  cancel(experimentId: string): Promise<unknown> {
    return fetch(`${this.base}/experiments/${experimentId}`, { method: "DELETE" }).then(
      (r) => toJson(r),
    );
  }

  metricsUrl(experimentId: string): string {
    return `${this.base}/experiments/${experimentId}/metrics`;
  }

  eventsUrl(experimentId: string): string {
    return `${this.base}/experiments/${experimentId}/events`;
  }
}

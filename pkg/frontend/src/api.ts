/** Typed client for the /api/v1 adjudication endpoints. */

export interface QueueItem {
  record_id: string;
  tag: string;
  rubric_prompt: string;
  comment_text: string;
  tag_name: string;
  tag_definition: string;
  /** Present only on non-blind runs; the server strips it otherwise. */
  model_verdicts?: Record<string, number>;
}

export interface QueueResponse {
  items: QueueItem[];
  done: number;
  total: number;
}

export interface RunSummary {
  run_id: string;
  created_at: string;
  status: string;
  blind: boolean;
}

export interface AdjudicationBody {
  record_id: string;
  tag: string;
  adjudicator_id: string;
  verdict: 1 | -1;
}

/** Per-column tag rows: tag -> [agreed, done]. */
export type PerTagReport = Record<string, Record<string, [number, number]>>;

export class ApiError extends Error {
  constructor(public status: number, detail: string) {
    super(`HTTP ${status}: ${detail}`);
  }
}

async function reject(res: Response): Promise<never> {
  let detail = res.statusText;
  try {
    const body = await res.json();
    if (typeof body.detail === "string") detail = body.detail;
  } catch {
    // non-JSON error body; keep the status text
  }
  throw new ApiError(res.status, detail);
}

export class ApiClient {
  constructor(
    private baseUrl = "",
    private fetchFn: typeof fetch = (...args) => fetch(...args),
  ) {}

  async listRuns(): Promise<RunSummary[]> {
    const res = await this.fetchFn(`${this.baseUrl}/api/v1/runs`);
    if (!res.ok) await reject(res);
    return (await res.json()).runs;
  }

  async fetchQueue(runId: string, adjudicatorId: string): Promise<QueueResponse> {
    const url = `${this.baseUrl}/api/v1/runs/${encodeURIComponent(runId)}/queue?adjudicator=${encodeURIComponent(adjudicatorId)}`;
    const res = await this.fetchFn(url);
    if (!res.ok) await reject(res);
    return res.json();
  }

  async submitAdjudication(runId: string, body: AdjudicationBody): Promise<void> {
    const res = await this.fetchFn(`${this.baseUrl}/api/v1/runs/${encodeURIComponent(runId)}/adjudications`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
    if (!res.ok) await reject(res);
  }

  async fetchPerTagReport(runId: string): Promise<PerTagReport> {
    const res = await this.fetchFn(`${this.baseUrl}/api/v1/runs/${encodeURIComponent(runId)}/report?format=json`);
    if (res.status === 409) return {}; // nothing to report yet
    if (!res.ok) await reject(res);
    return (await res.json()).per_tag ?? {};
  }
}

import type { ReviewView, TaskView } from "./types.js";

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

/** Non-2xx service reply; status 409 means duplicate/stale state. */
export class ApiError extends Error {
  constructor(
    readonly status: number,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

/** Transport-level failure (offline, connection refused). Retryable. */
export class NetworkError extends Error {
  constructor(cause: unknown) {
    super(`network failure: ${String(cause)}`);
    this.name = "NetworkError";
  }
}

async function detailOf(resp: Response): Promise<string> {
  try {
    const body = (await resp.json()) as { detail?: unknown };
    if (typeof body.detail === "string") return body.detail;
    if (body.detail !== undefined) return JSON.stringify(body.detail);
  } catch {
    // non-JSON error body; fall through to status line
  }
  return `HTTP ${resp.status}`;
}

export class AdjudicationApi {
  private readonly fetchImpl: FetchLike;

  constructor(
    private readonly baseUrl: string = "",
    fetchImpl?: FetchLike,
  ) {
    this.fetchImpl = fetchImpl ?? ((url, init) => fetch(url, init));
  }

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    let resp: Response;
    try {
      resp = await this.fetchImpl(this.baseUrl + path, init);
    } catch (err) {
      throw new NetworkError(err);
    }
    if (!resp.ok) {
      throw new ApiError(resp.status, await detailOf(resp));
    }
    return (await resp.json()) as T;
  }

  private post<T>(path: string, body: unknown): Promise<T> {
    return this.request<T>(path, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
  }

  async nextTask(annotator: string): Promise<TaskView | null> {
    const out = await this.request<{ task: TaskView | null }>(
      `/tasks/next?annotator=${encodeURIComponent(annotator)}`,
    );
    return out.task;
  }

  async submitLabel(taskId: string, annotator: string, label: string): Promise<TaskView> {
    const out = await this.post<{ task: TaskView }>(
      `/tasks/${encodeURIComponent(taskId)}/label`,
      { annotator, label },
    );
    return out.task;
  }

  async reviewQueue(): Promise<ReviewView[]> {
    const out = await this.request<{ tasks: ReviewView[] }>("/tasks?status=needs_review");
    return out.tasks;
  }

  async resolveTask(taskId: string, reviewer: string, label: string): Promise<ReviewView> {
    const out = await this.post<{ task: ReviewView }>(
      `/tasks/${encodeURIComponent(taskId)}/resolve`,
      { reviewer, label },
    );
    return out.task;
  }
}

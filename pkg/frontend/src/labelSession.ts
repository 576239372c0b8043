import { AdjudicationApi, ApiError, NetworkError } from "./api.js";
import { isValidLabel, normalizeLabelInput } from "./labels.js";
import type { TaskView } from "./types.js";

export type SessionState =
  | "loading"
  | "ready" // task on screen, accepting input
  | "offline" // a submission is queued for retry
  | "done" // no tasks left for this annotator
  | "failed"; // unrecoverable service error

export interface SessionSnapshot {
  state: SessionState;
  task: TaskView | null;
  input: string;
  notice: string | null;
  labeled: number;
}

interface QueuedSubmission {
  taskId: string;
  label: string;
  token: string;
}

/**
 * Label-flow state machine: fetch next task, normalize typed input live,
 * submit, auto-advance. A network failure queues the submission without
 * losing the typed label; retrying a submission that actually landed is
 * collapsed by the service's duplicate rejection, so reconnects never create
 * duplicate records. Submissions are de-duplicated by a per-(task, annotator)
 * token, which also makes double-clicks no-ops while a request is in flight.
 */
export class LabelSession {
  private task: TaskView | null = null;
  private state: SessionState = "loading";
  private input = "";
  private notice: string | null = null;
  private labeled = 0;
  private pending: QueuedSubmission | null = null;
  private readonly inflight = new Set<string>();

  constructor(
    private readonly api: AdjudicationApi,
    readonly annotator: string,
  ) {
    if (!annotator) throw new Error("annotator id must be non-empty");
  }

  snapshot(): SessionSnapshot {
    return {
      state: this.state,
      task: this.task,
      input: this.input,
      notice: this.notice,
      labeled: this.labeled,
    };
  }

  /** Live input transform: uppercase, A-Z/0-9 only. Returns the shown text. */
  setInput(raw: string): string {
    this.input = normalizeLabelInput(raw);
    return this.input;
  }

  async start(): Promise<SessionSnapshot> {
    await this.advance();
    return this.snapshot();
  }

  private async advance(): Promise<void> {
    this.state = "loading";
    try {
      this.task = await this.api.nextTask(this.annotator);
    } catch (err) {
      this.state = "failed";
      this.notice = String(err);
      return;
    }
    this.input = "";
    this.state = this.task === null ? "done" : "ready";
  }

  async submit(): Promise<SessionSnapshot> {
    if (this.state !== "ready" || this.task === null) return this.snapshot();
    if (!isValidLabel(this.input)) {
      this.notice = "enter at least one character (A-Z, 0-9)";
      return this.snapshot();
    }
    const token = `${this.task.id}:${this.annotator}`;
    if (this.inflight.has(token)) return this.snapshot(); // double-click no-op
    this.inflight.add(token);
    try {
      await this.api.submitLabel(this.task.id, this.annotator, this.input);
      this.labeled += 1;
      this.notice = null;
      await this.advance();
    } catch (err) {
      if (err instanceof NetworkError) {
        // keep the typed label; it will be retried on reconnect
        this.pending = { taskId: this.task.id, label: this.input, token };
        this.state = "offline";
        this.notice = "offline — submission queued, will retry";
      } else if (err instanceof ApiError && err.status === 409) {
        this.notice = `rejected: ${err.message}`;
        await this.advance(); // task is closed to us either way
      } else {
        this.state = "failed";
        this.notice = String(err);
      }
    } finally {
      this.inflight.delete(token);
    }
    return this.snapshot();
  }

  /** Retry the queued submission (call on reconnect). */
  async retryPending(): Promise<SessionSnapshot> {
    const queued = this.pending;
    if (!queued) return this.snapshot();
    if (this.inflight.has(queued.token)) return this.snapshot();
    this.inflight.add(queued.token);
    try {
      await this.api.submitLabel(queued.taskId, this.annotator, queued.label);
      this.pending = null;
      this.labeled += 1;
      this.notice = null;
      await this.advance();
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        // the lost reply case: the first attempt landed; not a duplicate
        this.pending = null;
        this.labeled += 1;
        this.notice = null;
        await this.advance();
      } else if (err instanceof NetworkError) {
        this.notice = "still offline — submission kept in queue";
      } else {
        this.state = "failed";
        this.notice = String(err);
      }
    } finally {
      this.inflight.delete(queued.token);
    }
    return this.snapshot();
  }
}

import { AdjudicationApi, ApiError } from "./api.js";
import { isValidLabel, normalizeLabelInput } from "./labels.js";
import type { ReviewView } from "./types.js";

export interface HighlightCell {
  ch: string;
  conflict: boolean;
}

export interface HighlightedSubmission {
  annotator: string;
  label: string;
  cells: HighlightCell[];
}

/** Per-position conflict highlighting for side-by-side submission display. */
export function highlightSubmissions(view: ReviewView): HighlightedSubmission[] {
  const conflictAt = new Set(view.conflict_positions);
  return Object.keys(view.submissions)
    .sort()
    .map((annotator) => {
      const label = view.submissions[annotator] ?? "";
      return {
        annotator,
        label,
        cells: [...label].map((ch, idx) => ({ ch, conflict: conflictAt.has(idx) })),
      };
    });
}

export interface ReviewSnapshot {
  tasks: ReviewView[];
  notice: string | null;
}

/**
 * Review-flow view-model: list conflicted tasks, resolve with a final label.
 * Invalid labels are blocked client-side; resolving a task someone else
 * already settled surfaces the conflict and refreshes the list.
 */
export class ReviewQueue {
  private tasks: ReviewView[] = [];
  private notice: string | null = null;
  private readonly inflight = new Set<string>();

  constructor(
    private readonly api: AdjudicationApi,
    readonly reviewer: string,
  ) {}

  snapshot(): ReviewSnapshot {
    return { tasks: [...this.tasks], notice: this.notice };
  }

  get isEmpty(): boolean {
    return this.tasks.length === 0;
  }

  async load(): Promise<ReviewSnapshot> {
    this.tasks = await this.api.reviewQueue();
    if (this.tasks.length === 0 && this.notice === null) {
      this.notice = "no conflicts to review";
    }
    return this.snapshot();
  }

  async resolve(taskId: string, rawLabel: string): Promise<boolean> {
    const label = normalizeLabelInput(rawLabel);
    if (!isValidLabel(label)) {
      this.notice = "final label must be non-empty A-Z/0-9";
      return false;
    }
    if (this.inflight.has(taskId)) return false; // double-click no-op
    this.inflight.add(taskId);
    try {
      await this.api.resolveTask(taskId, this.reviewer, label);
      this.tasks = this.tasks.filter((t) => t.id !== taskId);
      this.notice = null;
      return true;
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        this.notice = `already settled elsewhere: ${err.message}`;
        await this.load(); // refresh the stale list
        return false;
      }
      this.notice = String(err);
      return false;
    } finally {
      this.inflight.delete(taskId);
    }
  }
}

import { ApiError } from "./api.js";
import { isValidLabel, normalizeLabelInput } from "./labels.js";
/** Per-position conflict highlighting for side-by-side submission display. */
export function highlightSubmissions(view) {
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
/**
 * Review-flow view-model: list conflicted tasks, resolve with a final label.
 * Invalid labels are blocked client-side; resolving a task someone else
 * already settled surfaces the conflict and refreshes the list.
 */
export class ReviewQueue {
    api;
    reviewer;
    tasks = [];
    notice = null;
    inflight = new Set();
    constructor(api, reviewer) {
        this.api = api;
        this.reviewer = reviewer;
    }
    snapshot() {
        return { tasks: [...this.tasks], notice: this.notice };
    }
    get isEmpty() {
        return this.tasks.length === 0;
    }
    async load() {
        this.tasks = await this.api.reviewQueue();
        if (this.tasks.length === 0 && this.notice === null) {
            this.notice = "no conflicts to review";
        }
        return this.snapshot();
    }
    async resolve(taskId, rawLabel) {
        const label = normalizeLabelInput(rawLabel);
        if (!isValidLabel(label)) {
            this.notice = "final label must be non-empty A-Z/0-9";
            return false;
        }
        if (this.inflight.has(taskId))
            return false; // double-click no-op
        this.inflight.add(taskId);
        try {
            await this.api.resolveTask(taskId, this.reviewer, label);
            this.tasks = this.tasks.filter((t) => t.id !== taskId);
            this.notice = null;
            return true;
        }
        catch (err) {
            if (err instanceof ApiError && err.status === 409) {
                this.notice = `already settled elsewhere: ${err.message}`;
                await this.load(); // refresh the stale list
                return false;
            }
            this.notice = String(err);
            return false;
        }
        finally {
            this.inflight.delete(taskId);
        }
    }
}

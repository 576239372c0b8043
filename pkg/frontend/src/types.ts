/** JSON shapes returned by the adjudication service. */

export type TaskStatus = "pending" | "needs_review" | "resolved";

/** Blind task view: carries only the requesting annotator's own submission. */
export interface TaskView {
  id: string;
  image_url: string;
  status: TaskStatus;
  my_submission: string | null;
  submission_count: number;
}

/** Full view of a conflicted task; only ever served for needs_review tasks. */
export interface ReviewView {
  id: string;
  image_url: string;
  status: TaskStatus;
  submissions: Record<string, string>;
  conflict_positions: number[];
}

import { LabelSession } from "./labelSession.js";
import { ReviewQueue, highlightSubmissions } from "./reviewQueue.js";

function byId<T extends HTMLElement>(id: string): T {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el as T;
}

/** Image zoom and contrast controls shared by both panels. */
class PlateViewer {
  private zoom = 2;
  private contrast = 100;

  constructor(private readonly img: HTMLImageElement) {}

  show(url: string): void {
    this.img.src = url;
    this.apply();
  }

  zoomBy(step: number): void {
    this.zoom = Math.min(8, Math.max(1, this.zoom + step));
    this.apply();
  }

  setContrast(pct: number): void {
    this.contrast = pct;
    this.apply();
  }

  private apply(): void {
    this.img.style.width = `${120 * this.zoom}px`;
    this.img.style.imageRendering = "pixelated";
    this.img.style.filter = `contrast(${this.contrast}%)`;
  }
}

export function wireLabelPanel(session: LabelSession): void {
  const input = byId<HTMLInputElement>("label-input");
  const notice = byId<HTMLDivElement>("label-notice");
  const counter = byId<HTMLSpanElement>("label-count");
  const viewer = new PlateViewer(byId<HTMLImageElement>("plate-image"));

  const render = () => {
    const snap = session.snapshot();
    counter.textContent = String(snap.labeled);
    notice.textContent = snap.notice ?? "";
    input.value = snap.input;
    if (snap.state === "ready" && snap.task) {
      viewer.show(snap.task.image_url);
      byId("label-task-id").textContent = snap.task.id;
      input.disabled = false;
      input.focus();
    } else if (snap.state === "done") {
      byId("label-task-id").textContent = "all tasks labeled";
      input.disabled = true;
    }
  };

  input.addEventListener("input", () => {
    const caret = session.setInput(input.value).length;
    input.value = session.snapshot().input;
    input.setSelectionRange(caret, caret);
  });
  input.addEventListener("keydown", (ev) => {
    if (ev.key === "Enter") {
      void session.submit().then(render);
    }
  });
  byId("label-submit").addEventListener("click", () => void session.submit().then(render));
  byId("zoom-in").addEventListener("click", () => viewer.zoomBy(1));
  byId("zoom-out").addEventListener("click", () => viewer.zoomBy(-1));
  byId<HTMLInputElement>("contrast").addEventListener("input", (ev) => {
    viewer.setContrast(Number((ev.target as HTMLInputElement).value));
  });
  window.addEventListener("online", () => void session.retryPending().then(render));

  void session.start().then(render);
}

export function wireReviewPanel(queue: ReviewQueue): void {
  const list = byId<HTMLDivElement>("review-list");
  const notice = byId<HTMLDivElement>("review-notice");

  const render = () => {
    const snap = queue.snapshot();
    notice.textContent = snap.notice ?? "";
    list.replaceChildren();
    if (snap.tasks.length === 0) {
      const empty = document.createElement("p");
      empty.className = "empty-state";
      empty.textContent = "no conflicts to review";
      list.append(empty);
      return;
    }
    for (const task of snap.tasks) {
      const card = document.createElement("div");
      card.className = "review-card";
      const img = document.createElement("img");
      img.src = task.image_url;
      img.className = "review-image";
      card.append(img);
      for (const sub of highlightSubmissions(task)) {
        const row = document.createElement("div");
        row.className = "submission-row";
        const who = document.createElement("span");
        who.className = "annotator";
        who.textContent = sub.annotator;
        row.append(who);
        for (const cell of sub.cells) {
          const span = document.createElement("span");
          span.className = cell.conflict ? "cell conflict" : "cell";
          span.textContent = cell.ch;
          row.append(span);
        }
        card.append(row);
      }
      const input = document.createElement("input");
      input.placeholder = "final label";
      input.addEventListener("input", () => {
        input.value = input.value.toUpperCase().replace(/[^A-Z0-9]/g, "");
      });
      const button = document.createElement("button");
      button.textContent = "resolve";
      const doResolve = () => void queue.resolve(task.id, input.value).then(render);
      button.addEventListener("click", doResolve);
      input.addEventListener("keydown", (ev) => {
        if (ev.key === "Enter") doResolve();
      });
      card.append(input, button);
      list.append(card);
    }
  };

  byId("review-refresh").addEventListener("click", () => void queue.load().then(render));
  void queue.load().then(render);
}

import { AdjudicationApi } from "./api.js";
import { wireLabelPanel, wireReviewPanel } from "./dom.js";
import { LabelSession } from "./labelSession.js";
import { ReviewQueue } from "./reviewQueue.js";

function annotatorId(): string {
  const stored = localStorage.getItem("annotator_id");
  if (stored) return stored;
  let entered = "";
  while (!entered) {
    entered = (window.prompt("annotator id:") ?? "").trim();
  }
  localStorage.setItem("annotator_id", entered);
  return entered;
}

function main(): void {
  const annotator = annotatorId();
  document.getElementById("whoami")!.textContent = annotator;
  const api = new AdjudicationApi("");

  const tabs = document.querySelectorAll<HTMLButtonElement>("nav button");
  const panels = document.querySelectorAll<HTMLElement>("main > section");
  tabs.forEach((tab) =>
    tab.addEventListener("click", () => {
      panels.forEach((p) => p.classList.toggle("active", p.id === tab.dataset.panel));
      tabs.forEach((t) => t.classList.toggle("active", t === tab));
    }),
  );

  wireLabelPanel(new LabelSession(api, annotator));
  wireReviewPanel(new ReviewQueue(api, annotator));
}

main();

/** Browser bootstrap: wires the app to the DOM. Configuration is limited to
 * the service base URL (?api=...) and the poll interval (?poll=ms). */

import { ApiClient } from "./api.js";
import { WorklistApp } from "./app.js";

const params = new URLSearchParams(window.location.search);
const baseUrl = params.get("api") ?? "http://127.0.0.1:8000";
const pollMs = Number(params.get("poll") ?? "5000");

const root = document.getElementById("app");
if (!root) throw new Error("missing #app element");

const client = new ApiClient({ baseUrl });
const app = new WorklistApp(client, (html) => {
  root.innerHTML = html;
}, { pollMs });

root.addEventListener("click", (event) => {
  const target = (event.target as HTMLElement).closest("[data-action]");
  if (!(target instanceof HTMLElement)) return;
  const action = target.dataset.action;
  const studyId = target.dataset.studyId
    ?? target.closest("tr[data-study-id]")?.getAttribute("data-study-id")
    ?? undefined;
  switch (action) {
    case "open":
      if (studyId) void app.openStudy(studyId);
      break;
    case "mark-read":
      event.stopPropagation();
      if (studyId) void app.markRead(studyId);
      break;
    case "mode":
      void app.setMode(target.dataset.mode === "severity"
        ? "severity" : "identification");
      break;
    case "close":
      app.closeViewer();
      break;
    case "slice-prev":
      app.pageSlice(-1);
      break;
    case "slice-next":
      app.pageSlice(1);
      break;
  }
});

document.addEventListener("keydown", (event) => {
  if (event.target instanceof HTMLInputElement) return;
  void app.handleKey(event.key);
});

app.start();

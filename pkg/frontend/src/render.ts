/** Pure HTML-string renderers. Rows are emitted strictly in the order the
 * server returned them; ordering authority is the server. */

import type { StudyRecord, WorklistRow, WorklistView } from "./types.js";
import type { AppState } from "./app.js";

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

/** Same green-to-red scale the server uses for overlays. */
export function severityColor(value: number): string {
  const t = Math.min(Math.max(value, 0), 1);
  return `rgb(${Math.round(255 * t)}, ${Math.round(255 * (1 - t))}, 0)`;
}

export function severityBar(value: number): string {
  const percent = (value * 100).toFixed(1);
  return (
    `<span class="bar" data-severity="${value}" title="severity ${value}">` +
    `<span class="bar-fill" style="width:${percent}%;background:${severityColor(value)}"></span>` +
    `</span><span class="bar-label">${percent}%</span>`
  );
}

function row(item: WorklistRow, selected: boolean): string {
  const r = item.result;
  const probability = r ? r.covid_probability.toFixed(3) : "";
  const grade = r ? `CT-${r.ct_grade}` : "";
  const cls = [selected ? "selected" : "", item.read ? "read" : ""].join(" ").trim();
  return (
    `<tr class="${cls}" data-study-id="${escapeHtml(item.study_id)}" data-action="open" tabindex="0">` +
    `<td>${item.rank}</td>` +
    `<td class="id">${escapeHtml(item.study_id)}</td>` +
    `<td>${probability}</td>` +
    `<td>${r ? severityBar(r.severity) : ""}</td>` +
    `<td>${grade}</td>` +
    `<td>${item.read ? "read" : "unread"}</td>` +
    `<td><button data-action="mark-read" data-study-id="${escapeHtml(item.study_id)}"` +
    `${item.read ? " disabled" : ""}>mark read</button></td>` +
    `</tr>`
  );
}

function pendingList(records: StudyRecord[], label: string): string {
  if (!records.length) return "";
  const items = records
    .map((p) => `<li>${escapeHtml(p.study_id)} (${escapeHtml(p.status)}` +
      `${p.error ? `: ${escapeHtml(p.error)}` : ""})</li>`)
    .join("");
  return `<section class="${label.toLowerCase()}"><h2>${label}</h2><ul>${items}</ul></section>`;
}

export function renderWorklist(view: WorklistView, selectedIndex: number): string {
  const toggle =
    `<div class="mode-toggle">mode: ` +
    `<button data-action="mode" data-mode="identification"` +
    `${view.mode === "identification" ? " class='active'" : ""}>identification</button>` +
    `<button data-action="mode" data-mode="severity"` +
    `${view.mode === "severity" ? " class='active'" : ""}>severity</button></div>`;
  if (!view.items.length && !view.pending.length && !view.failed.length) {
    return `${toggle}<p class="empty">Queue clear - no studies waiting.</p>`;
  }
  const rows = view.items.map((item, i) => row(item, i === selectedIndex)).join("");
  const table =
    `<table class="worklist"><thead><tr>` +
    `<th>#</th><th>study</th><th>P</th><th>severity</th><th>grade</th>` +
    `<th>state</th><th></th></tr></thead><tbody>${rows}</tbody></table>`;
  return toggle + table + pendingList(view.pending, "Pending") +
    pendingList(view.failed, "Failed");
}

export function renderViewer(record: StudyRecord, sliceIndex: number,
                             overlayUrl: string): string {
  const r = record.result;
  const fractions = r
    ? `left ${(r.per_lung_fractions.left * 100).toFixed(1)}% / ` +
      `right ${(r.per_lung_fractions.right * 100).toFixed(1)}%`
    : "";
  return (
    `<div class="viewer" data-study-id="${escapeHtml(record.study_id)}">` +
    `<button data-action="close">back to worklist</button>` +
    `<h2>${escapeHtml(record.study_id)}</h2>` +
    (r
      ? `<p>P=${r.covid_probability.toFixed(3)} - CT-${r.ct_grade} - ` +
        `severity ${severityBar(r.severity)}</p><p>per-lung: ${fractions}</p>`
      : `<p>status: ${escapeHtml(record.status)}</p>`) +
    (record.note ? `<p class="note">note: ${escapeHtml(record.note)}</p>` : "") +
    `<div class="slice-nav">` +
    `<button data-action="slice-prev">&lt;</button>` +
    `<span>slice ${sliceIndex + 1} / ${record.n_slices}</span>` +
    `<button data-action="slice-next">&gt;</button></div>` +
    `<img class="overlay" src="${escapeHtml(overlayUrl)}" ` +
    `alt="overlay slice ${sliceIndex}">` +
    `</div>`
  );
}

export function renderApp(state: AppState, overlayUrl: string | null): string {
  const banner = state.error
    ? `<div class="banner error" role="alert">${escapeHtml(state.error)}` +
      ` - retrying</div>`
    : "";
  if (state.study && overlayUrl !== null) {
    return banner + renderViewer(state.study, state.sliceIndex, overlayUrl);
  }
  if (!state.view) {
    return banner + `<p class="loading">loading worklist...</p>`;
  }
  return banner + renderWorklist(state.view, state.selectedIndex);
}

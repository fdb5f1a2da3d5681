/** Application state and actions, DOM-free for testability. The UI never
 * reorders rows or recomputes scores; it renders what the server sent. */

import { ApiClient, ApiError } from "./api.js";
import { optimisticUpdate } from "./optimistic.js";
import { createPoller, type Poller } from "./polling.js";
import { renderApp } from "./render.js";
import type { Mode, StudyRecord, WorklistView } from "./types.js";

export interface AppState {
  mode: Mode;
  view: WorklistView | null;
  study: StudyRecord | null;
  sliceIndex: number;
  selectedIndex: number;
  error: string | null;
}

export interface AppOptions {
  pollMs?: number;
  maxBackoffMs?: number;
  now?: () => number;
}

/** The slice of the API client the app uses; tests substitute fakes. */
export type WorklistClient = Pick<
  ApiClient, "getWorklist" | "getStudy" | "markRead" | "overlayUrl"
>;

const DEFAULT_POLL_MS = 5000;

export class WorklistApp {
  readonly state: AppState = {
    mode: "identification",
    view: null,
    study: null,
    sliceIndex: 0,
    selectedIndex: 0,
    error: null,
  };

  private readonly pollMs: number;
  private readonly maxBackoffMs: number;
  private readonly now: () => number;
  private consecutiveFailures = 0;
  private retryAt = 0;
  private poller: Poller | null = null;

  constructor(
    private readonly client: WorklistClient,
    private readonly render: (html: string) => void,
    options: AppOptions = {},
  ) {
    this.pollMs = options.pollMs ?? DEFAULT_POLL_MS;
    this.maxBackoffMs = options.maxBackoffMs ?? 60_000;
    this.now = options.now ?? Date.now;
  }

  start(): void {
    this.poller = createPoller(() => this.refresh(), this.pollMs);
    this.poller.start();
  }

  stop(): void {
    this.poller?.destroy();
    this.poller = null;
  }

  private paint(): void {
    const overlay = this.state.study
      ? this.client.overlayUrl(this.state.study.study_id, this.state.sliceIndex,
                               this.state.mode)
      : null;
    this.render(renderApp(this.state, overlay));
  }

  /** Poll tick: fetch the worklist unless a backoff window is open. */
  async refresh(): Promise<void> {
    if (this.now() < this.retryAt) return;
    try {
      const view = await this.client.getWorklist(this.state.mode);
      this.state.view = view;
      this.state.error = null;
      this.consecutiveFailures = 0;
      this.clampSelection();
    } catch (err) {
      this.consecutiveFailures += 1;
      const delay = Math.min(
        this.pollMs * 2 ** this.consecutiveFailures, this.maxBackoffMs);
      this.retryAt = this.now() + delay;
      this.state.error = err instanceof ApiError && err.status > 0
        ? `service error ${err.status}: ${err.message}`
        : "cannot reach the triage service";
    }
    this.paint();
  }

  async toggleMode(): Promise<void> {
    this.state.mode = this.state.mode === "identification"
      ? "severity" : "identification";
    this.retryAt = 0;
    await this.refresh();
  }

  async setMode(mode: Mode): Promise<void> {
    if (mode !== this.state.mode) await this.toggleMode();
  }

  private clampSelection(): void {
    const n = this.state.view?.items.length ?? 0;
    this.state.selectedIndex = Math.min(Math.max(this.state.selectedIndex, 0),
                                        Math.max(n - 1, 0));
  }

  moveSelection(delta: number): void {
    this.state.selectedIndex += delta;
    this.clampSelection();
    this.paint();
  }

  selectedStudyId(): string | null {
    return this.state.view?.items[this.state.selectedIndex]?.study_id ?? null;
  }

  async openStudy(studyId: string): Promise<void> {
    try {
      this.state.study = await this.client.getStudy(studyId);
      this.state.sliceIndex = 0;
      this.state.error = null;
    } catch (err) {
      this.state.study = null;
      this.state.error = err instanceof ApiError && err.status === 404
        ? `study ${studyId} not found`
        : `failed to open ${studyId}`;
    }
    this.paint();
  }

  closeViewer(): void {
    this.state.study = null;
    this.paint();
  }

  /** Overlay paging stays inside [0, n_slices). */
  pageSlice(delta: number): void {
    if (!this.state.study) return;
    const n = Math.max(this.state.study.n_slices, 1);
    this.state.sliceIndex = Math.min(Math.max(this.state.sliceIndex + delta, 0),
                                     n - 1);
    this.paint();
  }

  /** Optimistically drop the row, then confirm with the server; the row is
   * restored and an error shown if the request fails. */
  async markRead(studyId: string, note?: string): Promise<void> {
    const view = this.state.view;
    if (!view) return;
    const next: WorklistView = {
      ...view,
      items: view.items.filter((item) => item.study_id !== studyId),
    };
    try {
      await optimisticUpdate(
        view,
        (value) => {
          this.state.view = value;
          this.clampSelection();
          this.paint();
        },
        next,
        () => this.client.markRead(studyId, note),
      );
    } catch (err) {
      this.state.error = err instanceof ApiError
        ? `mark read failed (${err.status}): ${err.message}`
        : "mark read failed";
      this.paint();
      return;
    }
    this.retryAt = 0;
    await this.refresh();
  }

  /** Keyboard operation: the whole queue is reachable without a pointer. */
  async handleKey(key: string): Promise<void> {
    if (this.state.study) {
      switch (key) {
        case "Escape":
          this.closeViewer();
          return;
        case "ArrowLeft":
        case "PageUp":
          this.pageSlice(-1);
          return;
        case "ArrowRight":
        case "PageDown":
          this.pageSlice(1);
          return;
      }
      return;
    }
    switch (key) {
      case "ArrowDown":
      case "j":
        this.moveSelection(1);
        return;
      case "ArrowUp":
      case "k":
        this.moveSelection(-1);
        return;
      case "Enter":
      case "o": {
        const id = this.selectedStudyId();
        if (id) await this.openStudy(id);
        return;
      }
      case "r": {
        const id = this.selectedStudyId();
        if (id) await this.markRead(id);
        return;
      }
      case "m":
        await this.toggleMode();
        return;
    }
  }
}

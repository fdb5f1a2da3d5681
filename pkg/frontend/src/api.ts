import type { HealthStatus, Mode, StudyRecord, WorklistView } from "./types.js";

export class ApiError extends Error {
  constructor(public readonly status: number, message: string) {
    super(message);
    this.name = "ApiError";
  }
}

export interface ApiOptions {
  baseUrl: string;
  /** Injectable for tests. */
  fetchFn?: typeof fetch;
}

/** Thin typed client over the documented service routes. */
export class ApiClient {
  private readonly base: string;
  private readonly fetchFn: typeof fetch;

  constructor(options: ApiOptions) {
    this.base = options.baseUrl.replace(/\/+$/, "");
    this.fetchFn = options.fetchFn ?? fetch.bind(globalThis);
  }

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    let response: Response;
    try {
      response = await this.fetchFn(`${this.base}${path}`, init);
    } catch (err) {
      throw new ApiError(0, `connection failed: ${String(err)}`);
    }
    if (!response.ok) {
      let detail = response.statusText;
      try {
        const body = (await response.json()) as { detail?: string };
        if (body.detail) detail = body.detail;
      } catch {
        // non-JSON error body; keep the status text
      }
      throw new ApiError(response.status, detail);
    }
    return (await response.json()) as T;
  }

  getWorklist(mode: Mode): Promise<WorklistView> {
    return this.request<WorklistView>(`/worklist?mode=${mode}`);
  }

  getStudy(studyId: string): Promise<StudyRecord> {
    return this.request<StudyRecord>(`/studies/${encodeURIComponent(studyId)}`);
  }

  markRead(studyId: string, note?: string): Promise<StudyRecord> {
    return this.request<StudyRecord>(
      `/studies/${encodeURIComponent(studyId)}/read`,
      {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify(note === undefined ? {} : { note }),
      },
    );
  }

  /** URL of the overlay bitmap for one slice; the browser loads it lazily. */
  overlayUrl(studyId: string, sliceIndex: number, mode?: Mode): string {
    const suffix = mode ? `?mode=${mode}` : "";
    return `${this.base}/studies/${encodeURIComponent(studyId)}/slices/${sliceIndex}/overlay${suffix}`;
  }

  health(): Promise<HealthStatus> {
    return this.request<HealthStatus>("/healthz");
  }
}

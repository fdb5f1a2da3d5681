/** Server payload shapes, mirrored verbatim from the service API.
 * The client never recomputes scores or reorders rows. */

export type Mode = "identification" | "severity";

export interface TriageResult {
  study_id: string;
  covid_probability: number;
  severity: number;
  ct_grade: number;
  per_lung_fractions: { left: number; right: number };
  method: string;
  wall_time_ms: number;
  ingested_at: number | null;
}

export type StudyStatus = "QUEUED" | "PROCESSING" | "SCORED" | "FAILED";

export interface StudyRecord {
  study_id: string;
  ingested_at: number;
  status: StudyStatus;
  result: TriageResult | null;
  read: boolean;
  note: string | null;
  error: string | null;
  source_name: string;
  n_slices: number;
}

/** One worklist entry: a record plus its server-assigned rank. */
export interface WorklistRow extends StudyRecord {
  rank: number;
}

export interface WorklistView {
  mode: Mode;
  generated_at: number;
  items: WorklistRow[];
  pending: StudyRecord[];
  failed: StudyRecord[];
}

export interface HealthStatus {
  status: string;
  uptime_s: number;
  models: { lungs: boolean; multitask: boolean };
  method: string;
  studies: number;
  queued: number;
}

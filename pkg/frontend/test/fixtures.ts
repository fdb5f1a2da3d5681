import { readFileSync } from "node:fs";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";
import type { StudyRecord, WorklistView } from "../src/types.js";

const here = dirname(fileURLToPath(import.meta.url));

function load<T>(name: string): T {
  return JSON.parse(readFileSync(join(here, "fixtures", name), "utf-8")) as T;
}

export const identificationView = () =>
  load<WorklistView>("worklist.identification.json");
export const severityView = () => load<WorklistView>("worklist.severity.json");
export const emptyView = () => load<WorklistView>("worklist.empty.json");
export const studyRecord = () => load<StudyRecord>("study.json");

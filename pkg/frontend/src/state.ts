// Client-side session state. Everything here is reconstructible from the
// API; it only tracks what the clinician is doing right now.

import type { InferenceResult } from "./api.js";

export const MAX_COMPARED_MODELS = 4;

// score -> rubric definition, rendered as button tooltips. Mirrors the
// service's fixed mapping; the UI can submit nothing outside it.
export const RUBRIC_LABELS: Record<number, string> = {
  0: "No answer",
  1: "Wrong answer",
  2: "Partially correct answer",
  3: "Correct answer with wrong reasoning",
  4: "Correct answer with correct reasoning",
};

export type PanelState =
  | { kind: "in-flight" }
  | { kind: "done"; result: InferenceResult; scored?: number }
  | { kind: "error"; message: string };

export interface SessionState {
  selectedModels: string[]; // model ids, at most MAX_COMPARED_MODELS
  imageFile: File | null;
  prompt: string;
  caseLabel: string;
  panels: Map<string, PanelState>; // model_id -> panel
  clinicianId: string;
}

export function newSession(clinicianId = "clinician"): SessionState {
  return {
    selectedModels: [],
    imageFile: null,
    prompt: "",
    caseLabel: "",
    panels: new Map(),
    clinicianId,
  };
}

export function toggleModel(state: SessionState, modelId: string): boolean {
  const i = state.selectedModels.indexOf(modelId);
  if (i >= 0) {
    state.selectedModels.splice(i, 1);
    return false;
  }
  if (state.selectedModels.length >= MAX_COMPARED_MODELS) {
    return false; // side-by-side comparison caps out
  }
  state.selectedModels.push(modelId);
  return true;
}

export function analyzeEnabled(state: SessionState): boolean {
  return (
    state.selectedModels.length > 0 &&
    state.imageFile !== null &&
    state.prompt.trim().length > 0
  );
}

export function scoringEnabled(panel: PanelState | undefined): boolean {
  return panel !== undefined && panel.kind === "done";
}

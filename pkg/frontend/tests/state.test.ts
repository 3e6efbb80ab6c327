import { describe, expect, it } from "vitest";

import { parseTelemetryCsv } from "../src/api.js";
import {
  MAX_COMPARED_MODELS,
  RUBRIC_LABELS,
  analyzeEnabled,
  newSession,
  scoringEnabled,
  toggleModel,
} from "../src/state.js";

describe("rubric labels", () => {
  it("carries exactly the five fixed rows", () => {
    expect(RUBRIC_LABELS).toEqual({
      0: "No answer",
      1: "Wrong answer",
      2: "Partially correct answer",
      3: "Correct answer with wrong reasoning",
      4: "Correct answer with correct reasoning",
    });
  });
});

describe("model selection", () => {
  it("toggles on and off", () => {
    const s = newSession();
    expect(toggleModel(s, "a")).toBe(true);
    expect(s.selectedModels).toEqual(["a"]);
    expect(toggleModel(s, "a")).toBe(false);
    expect(s.selectedModels).toEqual([]);
  });

  it("caps side-by-side selection", () => {
    const s = newSession();
    for (let i = 0; i < MAX_COMPARED_MODELS; i++) {
      expect(toggleModel(s, `m${i}`)).toBe(true);
    }
    expect(toggleModel(s, "one-too-many")).toBe(false);
    expect(s.selectedModels).toHaveLength(MAX_COMPARED_MODELS);
  });
});

describe("analyze gating", () => {
  it("requires a model, an image, and a prompt", () => {
    const s = newSession();
    expect(analyzeEnabled(s)).toBe(false);
    toggleModel(s, "m");
    expect(analyzeEnabled(s)).toBe(false);
    s.imageFile = new File([new Uint8Array([1])], "x.png", { type: "image/png" });
    expect(analyzeEnabled(s)).toBe(false);
    s.prompt = "describe";
    expect(analyzeEnabled(s)).toBe(true);
  });
});

describe("scoring gating", () => {
  it("only completed results are scorable", () => {
    expect(scoringEnabled(undefined)).toBe(false);
    expect(scoringEnabled({ kind: "in-flight" })).toBe(false);
    expect(scoringEnabled({ kind: "error", message: "x" })).toBe(false);
    expect(
      scoringEnabled({
        kind: "done",
        result: {
          job_id: "j",
          output_text: "t",
          model_id: "m",
          version: "1",
          replica_id: "r",
          latency_ms: 1,
          batch_id: "b",
          audit_id: "a",
        },
      }),
    ).toBe(true);
  });
});

describe("telemetry csv parsing", () => {
  it("parses the fixed six-column header format", () => {
    const text =
      "ts_ms,gpu_util_pct,mem_bytes,p50_ms,p95_ms,p99_ms\r\n" +
      "1000,0.0,67108864,4.0,8.0,8.0\r\n" +
      "2000,0.0,67108864,4.0,16.0,16.0\r\n";
    const rows = parseTelemetryCsv(text);
    expect(rows).toHaveLength(2);
    expect(rows[0]).toEqual({
      ts_ms: 1000,
      gpu_util_pct: 0,
      mem_bytes: 67108864,
      p50_ms: 4,
      p95_ms: 8,
      p99_ms: 8,
    });
  });

  it("handles a header-only export", () => {
    expect(parseTelemetryCsv("ts_ms,gpu_util_pct,mem_bytes,p50_ms,p95_ms,p99_ms\r\n")).toEqual([]);
  });
});

// Typed client for the hub's HTTP API. The dashboard holds no state the
// API cannot reproduce; every view is rebuilt from these calls alone.

export interface ModelRecord {
  model_id: string;
  display_name: string;
  source: { kind: "hub"; repo_id: string } | { kind: "path"; path: string };
  version: string;
  weights_digest: string;
  image_ref: string;
  status: string;
  failure_reason: string;
  created_at: number;
  updated_at: number;
}

export interface InferenceResult {
  job_id: string;
  output_text: string;
  model_id: string;
  version: string;
  replica_id: string;
  latency_ms: number;
  batch_id: string;
  audit_id: string;
  image_ref?: string; // server-side path of the stored upload
}

export interface ScoreEvent {
  score_id: string;
  clinician_id: string;
  case_id: string;
  model_id: string;
  version: string;
  score: number;
  rubric_label: string;
  comment: string;
  ts_ms: number;
}

export interface ScoreAggregate {
  counts: Record<string, number>;
  total: number;
  percentages: Record<string, number>;
}

export interface TelemetryRow {
  ts_ms: number;
  gpu_util_pct: number;
  mem_bytes: number;
  p50_ms: number;
  p95_ms: number;
  p99_ms: number;
}

export interface ApiError {
  error_code: string;
  message: string;
}

export class ApiRequestError extends Error {
  constructor(public status: number, public body: ApiError) {
    super(`${body.error_code}: ${body.message}`);
  }
}

async function parseError(res: Response): Promise<never> {
  let body: ApiError;
  try {
    body = (await res.json()) as ApiError;
  } catch {
    body = { error_code: "HttpError", message: `status ${res.status}` };
  }
  throw new ApiRequestError(res.status, body);
}

export class ApiClient {
  constructor(public baseUrl: string = "") {}

  private async getJson<T>(path: string): Promise<T> {
    const res = await fetch(this.baseUrl + path);
    if (!res.ok) await parseError(res);
    return (await res.json()) as T;
  }

  private async postJson<T>(path: string, body: unknown): Promise<T> {
    const res = await fetch(this.baseUrl + path, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
    if (!res.ok) await parseError(res);
    return (await res.json()) as T;
  }

  listModels(): Promise<ModelRecord[]> {
    return this.getJson("/api/models");
  }

  registerModel(
    source: { kind: "hub"; repo_id: string } | { kind: "path"; path: string },
    displayName: string,
    version: string,
  ): Promise<ModelRecord> {
    return this.postJson("/api/models", {
      source,
      display_name: displayName,
      version,
    });
  }

  acquire(modelId: string, version: string): Promise<{ record: ModelRecord; image_ref: string }> {
    return this.postJson(`/api/models/${encodeURIComponent(modelId)}/${encodeURIComponent(version)}/acquire`, {});
  }

  async analyze(modelId: string, prompt: string, image: File | Blob): Promise<InferenceResult> {
    const form = new FormData();
    form.append("image", image, image instanceof File ? image.name : "upload.png");
    form.append("prompt", prompt);
    form.append("model_id", modelId);
    const res = await fetch(this.baseUrl + "/api/analyze", { method: "POST", body: form });
    if (!res.ok) await parseError(res);
    return (await res.json()) as InferenceResult;
  }

  submitScore(
    caseLabel: string,
    modelId: string,
    version: string,
    score: number,
    clinicianId: string,
    comment = "",
  ): Promise<ScoreEvent> {
    return this.postJson("/api/scores", {
      case_id: caseLabel,
      model_id: modelId,
      version,
      score,
      comment,
      clinician_id: clinicianId,
    });
  }

  ingestCases(manifest: string): Promise<{ ingested: number }> {
    return fetch(this.baseUrl + "/api/cases/ingest", {
      method: "POST",
      body: manifest,
    }).then(async (res) => {
      if (!res.ok) await parseError(res);
      return (await res.json()) as { ingested: number };
    });
  }

  aggregate(filter: { dataset?: string; model_id?: string; clinician_id?: string } = {}): Promise<ScoreAggregate> {
    const params = new URLSearchParams();
    if (filter.dataset) params.set("dataset", filter.dataset);
    if (filter.model_id) params.set("model_id", filter.model_id);
    if (filter.clinician_id) params.set("clinician_id", filter.clinician_id);
    const qs = params.toString();
    return this.getJson(`/api/scores/aggregate${qs ? "?" + qs : ""}`);
  }

  async telemetry(modelId: string): Promise<TelemetryRow[]> {
    const res = await fetch(this.baseUrl + `/api/telemetry/${encodeURIComponent(modelId)}`);
    if (!res.ok) await parseError(res);
    return parseTelemetryCsv(await res.text());
  }

  scoresCsvUrl(): string {
    return this.baseUrl + "/api/export/scores.csv";
  }

  async scoresCsv(): Promise<string> {
    const res = await fetch(this.scoresCsvUrl());
    if (!res.ok) await parseError(res);
    return res.text();
  }
}

export function parseTelemetryCsv(text: string): TelemetryRow[] {
  const lines = text.split(/\r?\n/).filter((l) => l.length > 0);
  const rows: TelemetryRow[] = [];
  for (const line of lines.slice(1)) {
    const [ts, gpu, mem, p50, p95, p99] = line.split(",");
    rows.push({
      ts_ms: Number(ts),
      gpu_util_pct: Number(gpu),
      mem_bytes: Number(mem),
      p50_ms: Number(p50),
      p95_ms: Number(p95),
      p99_ms: Number(p99),
    });
  }
  return rows;
}

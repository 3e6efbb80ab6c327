// Aggregate results page: per-model score histograms (absolute and
// stacked-percentage), telemetry sparklines, and the CSV export link.

import { ApiClient, ScoreAggregate, TelemetryRow } from "../api.js";
import { clear, el, svgEl } from "../dom.js";
import { RUBRIC_LABELS } from "../state.js";

const BAR_COLORS = ["#b0413e", "#d08534", "#c9b458", "#7da35e", "#2e7d4f"];

export class ResultsView {
  readonly root: HTMLElement;
  private body: HTMLElement;
  private timer: ReturnType<typeof setInterval> | null = null;

  constructor(private api: ApiClient, private pollMs = 1000) {
    this.body = el("div", { id: "results-body" });
    const link = el("a", {
      id: "csv-link",
      href: this.api.scoresCsvUrl(),
      download: "scores.csv",
      text: "Download score CSV",
    });
    this.root = el("section", { id: "view-results" }, [
      el("h2", { text: "Evaluation Results" }),
      link,
      this.body,
    ]);
  }

  async refresh(): Promise<void> {
    const models = await this.api.listModels();
    const aggregates = new Map<string, ScoreAggregate>();
    for (const m of models) {
      aggregates.set(m.model_id, await this.api.aggregate({ model_id: m.model_id }));
    }
    clear(this.body);
    const scoredModels = models.filter((m) => (aggregates.get(m.model_id)?.total ?? 0) > 0);
    if (scoredModels.length === 0) {
      this.body.append(el("p", { class: "placeholder", text: "No scores recorded yet." }));
      return;
    }
    for (const m of scoredModels) {
      const agg = aggregates.get(m.model_id)!;
      const block = el("div", { class: "model-results", "data-model-id": m.model_id }, [
        el("h3", { text: `${m.display_name} — ${agg.total} scored` }),
        this.histogram(agg),
        this.stackedPercentages(agg),
      ]);
      const telemetry = await this.api.telemetry(m.model_id).catch(() => [] as TelemetryRow[]);
      if (telemetry.length > 0) {
        block.append(this.sparkline(telemetry));
      }
      this.body.append(block);
    }
  }

  private histogram(agg: ScoreAggregate): HTMLElement {
    const max = Math.max(1, ...Object.values(agg.counts));
    const rows = [0, 1, 2, 3, 4].map((s) => {
      const count = agg.counts[String(s)] ?? 0;
      const bar = el("div", { class: "bar" });
      bar.style.width = `${(count / max) * 100}%`;
      bar.style.background = BAR_COLORS[s];
      return el("div", { class: "hist-row", "data-score": String(s) }, [
        el("span", { class: "hist-label", title: RUBRIC_LABELS[s], text: `${s}` }),
        bar,
        el("span", { class: "hist-count", text: String(count) }),
      ]);
    });
    return el("div", { class: "histogram" }, rows);
  }

  private stackedPercentages(agg: ScoreAggregate): HTMLElement {
    const stack = el("div", { class: "stacked-pct" });
    for (const s of [0, 1, 2, 3, 4]) {
      const pct = agg.percentages[String(s)] ?? 0;
      if (pct <= 0) continue;
      const seg = el("div", {
        class: "pct-segment",
        "data-score": String(s),
        title: `${s} (${RUBRIC_LABELS[s]}): ${pct.toFixed(1)}%`,
        text: pct >= 8 ? `${pct.toFixed(1)}%` : "",
      });
      seg.style.width = `${pct}%`;
      seg.style.background = BAR_COLORS[s];
      stack.append(seg);
    }
    return stack;
  }

  private sparkline(rows: TelemetryRow[]): HTMLElement {
    const width = 240;
    const height = 40;
    const latencies = rows.map((r) => r.p95_ms);
    const max = Math.max(1, ...latencies.filter((v) => Number.isFinite(v)));
    const step = rows.length > 1 ? width / (rows.length - 1) : 0;
    const points = latencies
      .map((v, i) => `${(i * step).toFixed(1)},${(height - (Math.min(v, max) / max) * height).toFixed(1)}`)
      .join(" ");
    const svg = svgEl(
      "svg",
      { class: "sparkline", width: String(width), height: String(height), viewBox: `0 0 ${width} ${height}` },
      [svgEl("polyline", { points, fill: "none", stroke: "#445", "stroke-width": "1.5" })],
    );
    return el("div", { class: "telemetry" }, [
      el("span", { class: "telemetry-label", text: "p95 latency" }),
      svg as unknown as HTMLElement,
    ]);
  }

  startPolling(): void {
    if (this.timer === null) {
      this.timer = setInterval(() => void this.refresh().catch(() => {}), this.pollMs);
    }
  }

  stopPolling(): void {
    if (this.timer !== null) {
      clearInterval(this.timer);
      this.timer = null;
    }
  }
}

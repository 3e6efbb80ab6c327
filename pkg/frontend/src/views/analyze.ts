// Case workbench: upload an image, type a prompt, toggle up to four
// models, and Analyze fans one inference request out per selected model.
// Each result panel renders the formatted report and five rubric buttons.

import { ApiClient, ApiRequestError, ModelRecord } from "../api.js";
import { clear, el } from "../dom.js";
import {
  MAX_COMPARED_MODELS,
  RUBRIC_LABELS,
  SessionState,
  analyzeEnabled,
  toggleModel,
} from "../state.js";

export class AnalyzeView {
  readonly root: HTMLElement;
  private toggles: HTMLElement;
  private panels: HTMLElement;
  private analyzeBtn: HTMLButtonElement;
  private caseInput: HTMLInputElement;
  private models: ModelRecord[] = [];

  constructor(private api: ApiClient, private state: SessionState) {
    this.toggles = el("div", { id: "model-toggles" });
    this.panels = el("div", { id: "result-panels" });
    this.caseInput = el("input", {
      id: "case-label",
      placeholder: "Case id (for scoring)",
    }) as HTMLInputElement;
    this.caseInput.addEventListener("input", () => {
      this.state.caseLabel = this.caseInput.value;
    });

    const imageInput = el("input", { id: "image-input", type: "file", accept: "image/*" });
    imageInput.addEventListener("change", () => {
      const files = (imageInput as HTMLInputElement).files;
      this.noteImage(files && files.length > 0 ? files[0] : null);
    });

    const promptBox = el("textarea", {
      id: "prompt-box",
      placeholder: "Can you describe morphology changes in this image?",
    }) as HTMLTextAreaElement;
    promptBox.addEventListener("input", () => {
      this.state.prompt = promptBox.value;
      this.updateControls();
    });

    this.analyzeBtn = el("button", { id: "analyze-btn", text: "Analyze", disabled: "" }) as HTMLButtonElement;
    this.analyzeBtn.addEventListener("click", (ev) => {
      ev.preventDefault();
      void this.analyze();
    });

    this.root = el("section", { id: "view-analyze" }, [
      el("h2", { text: "Case Workbench" }),
      el("div", { class: "workbench-grid" }, [
        el("div", {}, [
          el("h3", { text: "Image Loader" }),
          imageInput,
          this.caseInput,
          el("h3", { text: "Prompt" }),
          promptBox,
          el("h3", { text: `Models (up to ${MAX_COMPARED_MODELS})` }),
          this.toggles,
          this.analyzeBtn,
        ]),
        this.panels,
      ]),
    ]);
  }

  // Exposed for scripted tests where a real file picker is unavailable.
  setImage(file: File): void {
    this.noteImage(file);
  }

  private noteImage(file: File | null): void {
    this.state.imageFile = file;
    if (file && !this.state.caseLabel) {
      // Sensible default case id; the clinician can overwrite it.
      this.state.caseLabel = `case-${file.name.replace(/\.[^.]+$/, "")}`;
      this.caseInput.value = this.state.caseLabel;
    }
    this.updateControls();
  }

  async refresh(): Promise<void> {
    this.models = await this.api.listModels();
    clear(this.toggles);
    for (const m of this.models) {
      const checkbox = el("input", {
        type: "checkbox",
        id: `toggle-${m.model_id}`,
        "data-model-id": m.model_id,
      }) as HTMLInputElement;
      checkbox.checked = this.state.selectedModels.includes(m.model_id);
      checkbox.addEventListener("change", () => {
        const nowSelected = toggleModel(this.state, m.model_id);
        checkbox.checked = nowSelected;
        this.updateControls();
      });
      this.toggles.append(
        el("label", { class: "model-toggle" }, [
          checkbox,
          ` ${m.display_name} (${m.status})`,
        ]),
      );
    }
    this.updateControls();
  }

  private updateControls(): void {
    if (analyzeEnabled(this.state)) {
      this.analyzeBtn.removeAttribute("disabled");
    } else {
      this.analyzeBtn.setAttribute("disabled", "");
    }
  }

  async analyze(): Promise<void> {
    const image = this.state.imageFile;
    if (!image || !analyzeEnabled(this.state)) return;
    const selected = [...this.state.selectedModels];
    this.state.panels = new Map(selected.map((id) => [id, { kind: "in-flight" as const }]));
    this.renderPanels();
    await Promise.all(
      selected.map(async (modelId) => {
        try {
          const result = await this.api.analyze(modelId, this.state.prompt, image);
          this.state.panels.set(modelId, { kind: "done", result });
        } catch (err) {
          const message =
            err instanceof ApiRequestError ? `${err.body.error_code}: ${err.body.message}` : String(err);
          this.state.panels.set(modelId, { kind: "error", message });
        }
        this.renderPanels();
      }),
    );
  }

  private displayName(modelId: string): string {
    const m = this.models.find((x) => x.model_id === modelId);
    return m ? m.display_name : modelId;
  }

  renderPanels(): void {
    clear(this.panels);
    if (this.state.panels.size === 0) {
      this.panels.append(
        el("p", { class: "placeholder", text: "Select models, load an image, and press Analyze." }),
      );
      return;
    }
    for (const [modelId, panel] of this.state.panels) {
      const box = el("article", { class: "panel", "data-model-id": modelId }, [
        el("h3", { text: this.displayName(modelId) }),
      ]);
      if (panel.kind === "in-flight") {
        box.append(el("p", { class: "pending", text: "Analyzing..." }));
      } else if (panel.kind === "error") {
        const retry = el("button", { class: "retry-btn", text: "Retry" });
        retry.addEventListener("click", () => void this.analyze());
        box.append(el("p", { class: "error", text: panel.message }), retry);
      } else {
        const r = panel.result;
        box.append(
          el("div", { class: "report" }, [
            el("p", { class: "report-prompt", text: this.state.prompt }),
            el("pre", { class: "report-text", text: r.output_text }),
            el("p", {
              class: "report-meta",
              text: `${r.model_id}@${r.version} · ${r.latency_ms} ms`,
            }),
          ]),
          this.buildRubricRow(modelId, panel.scored),
        );
        if (panel.scored !== undefined) {
          box.append(
            el("p", {
              class: "score-confirmation",
              text: `Scored ${panel.scored}: ${RUBRIC_LABELS[panel.scored]}`,
            }),
          );
        }
      }
      this.panels.append(box);
    }
  }

  private buildRubricRow(modelId: string, scored: number | undefined): HTMLElement {
    const row = el("div", { class: "rubric-row" });
    for (const score of [0, 1, 2, 3, 4]) {
      const btn = el("button", {
        class: "rubric-btn" + (scored === score ? " selected" : ""),
        title: RUBRIC_LABELS[score],
        "data-score": String(score),
        text: String(score),
      });
      btn.addEventListener("click", (ev) => {
        ev.preventDefault();
        void this.submitScore(modelId, score);
      });
      row.append(btn);
    }
    return row;
  }

  async submitScore(modelId: string, score: number): Promise<void> {
    const panel = this.state.panels.get(modelId);
    if (!panel || panel.kind !== "done") return; // scoring needs a result
    try {
      const event = await this.trySubmit(modelId, panel.result, score);
      this.state.panels.set(modelId, { ...panel, scored: event.score });
    } catch (err) {
      const message =
        err instanceof ApiRequestError ? `${err.body.error_code}: ${err.body.message}` : String(err);
      this.state.panels.set(modelId, { kind: "error", message });
    }
    this.renderPanels();
  }

  private async trySubmit(modelId: string, result: { version: string; image_ref?: string }, score: number) {
    try {
      return await this.api.submitScore(
        this.state.caseLabel,
        modelId,
        result.version,
        score,
        this.state.clinicianId,
      );
    } catch (err) {
      // A fresh upload is not a registered case yet; ingest it from the
      // server-side stored image and score again.
      if (err instanceof ApiRequestError && err.body.error_code === "UnknownCase" && result.image_ref) {
        await this.api.ingestCases(
          JSON.stringify({
            case_id: this.state.caseLabel,
            dataset: "other",
            image_path: result.image_ref,
            prompt: this.state.prompt,
            source_note: "dashboard upload",
          }) + "\n",
        );
        return await this.api.submitScore(
          this.state.caseLabel,
          modelId,
          result.version,
          score,
          this.state.clinicianId,
        );
      }
      throw err;
    }
  }
}

// Model download & registration page: add a model by hub id or local
// path; registration kicks off weight retrieval and containerization, and
// the table reflects progress by polling the registry.

import { ApiClient, ApiRequestError, ModelRecord } from "../api.js";
import { clear, el } from "../dom.js";

export class ModelsView {
  readonly root: HTMLElement;
  private table: HTMLElement;
  private errorBox: HTMLElement;
  private timer: ReturnType<typeof setInterval> | null = null;

  constructor(private api: ApiClient, private pollMs = 1000) {
    this.errorBox = el("div", { class: "error-box", id: "models-error" });
    this.table = el("div", { id: "models-table" });
    this.root = el("section", { id: "view-models" }, [
      el("h2", { text: "Model Download & Registration" }),
      this.buildForm(),
      this.errorBox,
      this.table,
    ]);
  }

  private buildForm(): HTMLElement {
    const kind = el("select", { id: "reg-kind" }, [
      el("option", { value: "hub", text: "Hub repo id" }),
      el("option", { value: "path", text: "Local path" }),
    ]);
    const locator = el("input", { id: "reg-locator", placeholder: "e.g. org/model or /weights/dir" });
    const name = el("input", { id: "reg-name", placeholder: "Display name" });
    const version = el("input", { id: "reg-version", value: "1" });
    const submit = el("button", { id: "reg-submit", text: "Register" });
    submit.addEventListener("click", async (ev) => {
      ev.preventDefault();
      this.errorBox.textContent = "";
      const source =
        (kind as HTMLSelectElement).value === "hub"
          ? { kind: "hub" as const, repo_id: (locator as HTMLInputElement).value }
          : { kind: "path" as const, path: (locator as HTMLInputElement).value };
      try {
        const record = await this.api.registerModel(
          source,
          (name as HTMLInputElement).value,
          (version as HTMLInputElement).value,
        );
        // Retrieval and containerization start right away; the poll loop
        // shows Acquiring -> Containerized as it progresses.
        void this.api.acquire(record.model_id, record.version).catch((err) => {
          this.showError(err);
        });
        await this.refresh();
      } catch (err) {
        this.showError(err);
      }
    });
    return el("form", { id: "reg-form" }, [kind, locator, name, version, submit]);
  }

  private showError(err: unknown): void {
    if (err instanceof ApiRequestError) {
      this.errorBox.textContent = `${err.body.error_code}: ${err.body.message}`;
    } else {
      this.errorBox.textContent = String(err);
    }
  }

  async refresh(): Promise<ModelRecord[]> {
    const models = await this.api.listModels();
    clear(this.table);
    if (models.length === 0) {
      this.table.append(el("p", { class: "placeholder", text: "No models registered yet." }));
      return models;
    }
    const header = el("tr", {}, [
      el("th", { text: "Model" }),
      el("th", { text: "Version" }),
      el("th", { text: "Status" }),
      el("th", { text: "Source" }),
    ]);
    const rows = models.map((m) =>
      el("tr", { class: "model-row", "data-model-id": m.model_id }, [
        el("td", { text: m.display_name }),
        el("td", { text: m.version }),
        el("td", { class: `status status-${m.status.toLowerCase()}`, text: m.status }),
        el("td", { text: m.source.kind === "hub" ? m.source.repo_id : m.source.path }),
      ]),
    );
    this.table.append(el("table", {}, [header, ...rows]));
    return models;
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

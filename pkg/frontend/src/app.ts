// Dashboard shell: three tabs (models, analyze, results) over the hub API.
// A full page reload rebuilds every view from API state alone.

import { ApiClient } from "./api.js";
import { clear, el } from "./dom.js";
import { newSession, SessionState } from "./state.js";
import { AnalyzeView } from "./views/analyze.js";
import { ModelsView } from "./views/models.js";
import { ResultsView } from "./views/results.js";

export interface AppConfig {
  baseUrl?: string;
  pollMs?: number;
  clinicianId?: string;
}

export class App {
  readonly api: ApiClient;
  readonly state: SessionState;
  readonly models: ModelsView;
  readonly analyze: AnalyzeView;
  readonly results: ResultsView;
  private active = "models";
  private content: HTMLElement;

  constructor(host: HTMLElement, config: AppConfig = {}) {
    this.api = new ApiClient(config.baseUrl ?? "");
    this.state = newSession(config.clinicianId ?? "clinician");
    const pollMs = config.pollMs ?? 1000;
    this.models = new ModelsView(this.api, pollMs);
    this.analyze = new AnalyzeView(this.api, this.state);
    this.results = new ResultsView(this.api, pollMs);
    this.content = el("main", { id: "content" });

    const nav = el("nav", {}, [
      this.tabButton("models", "Models"),
      this.tabButton("analyze", "Analyze"),
      this.tabButton("results", "Results"),
    ]);
    clear(host);
    host.append(el("header", {}, [el("h1", { text: "Model Deployment Hub" }), nav]), this.content);
  }

  private tabButton(id: string, label: string): HTMLElement {
    const btn = el("button", { id: `tab-${id}`, class: "tab", text: label });
    btn.addEventListener("click", () => void this.show(id));
    return btn;
  }

  async show(tab: string): Promise<void> {
    this.active = tab;
    this.models.stopPolling();
    this.results.stopPolling();
    clear(this.content);
    if (tab === "models") {
      this.content.append(this.models.root);
      await this.models.refresh();
      this.models.startPolling();
    } else if (tab === "analyze") {
      this.content.append(this.analyze.root);
      await this.analyze.refresh();
      this.analyze.renderPanels();
    } else {
      this.content.append(this.results.root);
      await this.results.refresh();
      this.results.startPolling();
    }
  }

  get activeTab(): string {
    return this.active;
  }

  dispose(): void {
    this.models.stopPolling();
    this.results.stopPolling();
  }
}

export async function mount(host: HTMLElement, config: AppConfig = {}): Promise<App> {
  const app = new App(host, config);
  await app.show("models");
  return app;
}

declare global {
  interface Window {
    __MODELHUB_NO_AUTOMOUNT__?: boolean;
  }
}

if (typeof document !== "undefined" && !window.__MODELHUB_NO_AUTOMOUNT__) {
  const host = document.getElementById("app");
  if (host) {
    void mount(host);
  }
}

// Dashboard wiring: one App instance owns the polling loop, the selection
// state, and the render cycle. All state is derived from API responses;
// nothing is shown optimistically — a job's outcome appears only after the
// server reports it.

import { Api, ApiError } from "./api.js";
import { buildDagLayout } from "./dag.js";
import { buildSeries } from "./trajectory.js";
import { BASE_POLL_MS, JobTracker, nextPollDelay } from "./jobs.js";
import {
  renderBanner,
  renderDag,
  renderDiff,
  renderJobs,
  renderTrajectory,
} from "./render.js";
import type { CheckpointListing, TransformationSummary } from "./types.js";

export interface AppElements {
  dag: HTMLElement;
  chart: HTMLElement;
  jobs: HTMLElement;
  diff: HTMLElement;
  banner: HTMLElement;
  transformSelect: HTMLSelectElement;
  transformButton: HTMLButtonElement;
  tagInput: HTMLInputElement;
  tagButton: HTMLButtonElement;
}

export class App {
  api: Api;
  elements: AppElements;
  listing: CheckpointListing = { checkpoints: [], refs: {} };
  transformations: TransformationSummary[] = [];
  selection: string[] = [];
  tracker = new JobTracker();
  pollDelay = BASE_POLL_MS;
  stale = false;
  private timer: ReturnType<typeof setInterval> | null = null;

  constructor(baseUrl: string, elements: AppElements) {
    this.api = new Api(baseUrl);
    this.elements = elements;
    elements.transformButton.addEventListener("click", () => {
      void this.submitTransform();
    });
    elements.tagButton.addEventListener("click", () => {
      void this.submitTag();
    });
  }

  async start(): Promise<void> {
    const catalog = await this.api.transformations();
    this.transformations = catalog.transformations;
    this.elements.transformSelect.textContent = "";
    for (const t of this.transformations) {
      const option = document.createElement("option");
      option.value = t.name;
      option.textContent = `${t.name} (${t.passes} passes)`;
      this.elements.transformSelect.appendChild(option);
    }
    await this.tick();
    this.timer = setInterval(() => void this.tick(), BASE_POLL_MS);
  }

  stop(): void {
    if (this.timer !== null) clearInterval(this.timer);
  }

  /** One poll cycle: jobs first (completions trigger a listing refresh). */
  async tick(): Promise<void> {
    let needRefresh = false;
    for (const job of this.tracker.pending()) {
      try {
        const payload = await this.api.job(job.id);
        if (this.tracker.update(payload)) needRefresh = true;
        this.pollDelay = nextPollDelay(this.pollDelay, false);
      } catch {
        this.pollDelay = nextPollDelay(this.pollDelay, true);
      }
    }
    try {
      this.listing = await this.api.listCheckpoints();
      this.stale = false;
    } catch (exc) {
      this.stale = true;
    }
    void needRefresh; // the listing refetch above already covered it
    await this.render();
  }

  async render(): Promise<void> {
    renderBanner(
      this.elements.banner,
      this.stale ? "connection lost — showing stale data" : null,
    );
    this.elements.dag.classList.toggle("stale", this.stale);
    renderDag(this.elements.dag, buildDagLayout(
      this.listing.checkpoints, this.listing.refs,
    ), this.selection, (id) => {
      void this.select(id);
    });
    renderJobs(this.elements.jobs, this.tracker.jobs);

    const tip = this.selection[0];
    if (tip) {
      try {
        const payload = await this.api.trajectory(tip);
        renderTrajectory(this.elements.chart, buildSeries(payload));
      } catch (exc) {
        const message =
          exc instanceof ApiError ? exc.message : "trajectory unavailable";
        renderTrajectory(this.elements.chart, null, message);
      }
    } else {
      renderTrajectory(this.elements.chart, null);
    }

    if (this.selection.length === 2) {
      const diff = await this.api.diff(this.selection[1], this.selection[0]);
      renderDiff(this.elements.diff, diff);
    } else {
      renderDiff(this.elements.diff, null);
    }
  }

  async select(id: string): Promise<void> {
    if (this.selection.includes(id)) {
      this.selection = this.selection.filter((s) => s !== id);
    } else {
      this.selection = [id, ...this.selection].slice(0, 2);
    }
    await this.render();
  }

  async submitTransform(): Promise<void> {
    const target = this.selection[0];
    const name = this.elements.transformSelect.value;
    if (!target || !name) return;
    const response = await this.api.submitTransform(target, name);
    this.tracker.submit(response.job_id, "transform", name, Date.now());
    await this.render();
  }

  async submitTag(): Promise<void> {
    const target = this.selection[0];
    const name = this.elements.tagInput.value.trim();
    if (!target || !name) return;
    await this.api.tag(name, target);
    this.elements.tagInput.value = "";
    await this.tick();
  }
}

export function mount(baseUrl: string, root: Document = document): App {
  const byId = <T extends HTMLElement>(id: string): T => {
    const el = root.getElementById(id);
    if (!el) throw new Error(`missing #${id}`);
    return el as T;
  };
  const app = new App(baseUrl, {
    dag: byId("dag"),
    chart: byId("chart"),
    jobs: byId("jobs"),
    diff: byId("diff"),
    banner: byId("banner"),
    transformSelect: byId<HTMLSelectElement>("transform-select"),
    transformButton: byId<HTMLButtonElement>("transform-button"),
    tagInput: byId<HTMLInputElement>("tag-input"),
    tagButton: byId<HTMLButtonElement>("tag-button"),
  });
  return app;
}

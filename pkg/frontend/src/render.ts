// DOM/SVG rendering. Pure in the sense that each render function rebuilds
// its container from a view model; interaction is wired through callbacks.

import type { DagLayout, DagNode } from "./dag.js";
import type { TrajectorySeries, SeriesPoint } from "./trajectory.js";
import { formatSpeedup } from "./trajectory.js";
import type { TrackedJob } from "./jobs.js";
import type { DiffPayload } from "./types.js";

const SVG_NS = "http://www.w3.org/2000/svg";

const NODE_W = 168;
const NODE_H = 54;
const GAP_X = 48;
const GAP_Y = 18;

function svgEl<K extends keyof SVGElementTagNameMap>(
  tag: K,
  attrs: Record<string, string | number>,
): SVGElementTagNameMap[K] {
  const el = document.createElementNS(SVG_NS, tag);
  for (const [key, value] of Object.entries(attrs)) {
    el.setAttribute(key, String(value));
  }
  return el;
}

function nodeXY(node: DagNode): { x: number; y: number } {
  return {
    x: 16 + node.depth * (NODE_W + GAP_X),
    y: 16 + node.lane * (NODE_H + GAP_Y),
  };
}

export function renderDag(
  container: HTMLElement,
  layout: DagLayout,
  selected: string[],
  onSelect: (id: string) => void,
): void {
  container.textContent = "";
  if (layout.nodes.length === 0) {
    const empty = document.createElement("p");
    empty.className = "empty-state";
    empty.textContent =
      "No checkpoints yet. Seed the workflow with `peak init` to begin.";
    container.appendChild(empty);
    return;
  }
  const maxDepth = Math.max(...layout.nodes.map((n) => n.depth));
  const maxLane = Math.max(...layout.nodes.map((n) => n.lane));
  const svg = svgEl("svg", {
    width: 32 + (maxDepth + 1) * (NODE_W + GAP_X),
    height: 32 + (maxLane + 1) * (NODE_H + GAP_Y),
    class: "dag",
  });

  const positions = new Map(layout.nodes.map((n) => [n.id, nodeXY(n)]));
  for (const edge of layout.edges) {
    const from = positions.get(edge.from);
    const to = positions.get(edge.to);
    if (!from || !to) continue;
    svg.appendChild(
      svgEl("line", {
        x1: from.x + NODE_W,
        y1: from.y + NODE_H / 2,
        x2: to.x,
        y2: to.y + NODE_H / 2,
        class: "dag-edge",
      }),
    );
  }

  for (const node of layout.nodes) {
    const { x, y } = nodeXY(node);
    const group = svgEl("g", {
      class:
        "dag-node" +
        (selected.includes(node.id) ? " selected" : "") +
        (node.verdict === "fail" ? " failed" : ""),
      "data-id": node.id,
    });
    group.appendChild(svgEl("rect", { x, y, width: NODE_W, height: NODE_H, rx: 6 }));
    const title = svgEl("text", { x: x + 8, y: y + 18, class: "dag-title" });
    title.textContent = `${node.title} (${node.short})`;
    group.appendChild(title);
    const meta = svgEl("text", { x: x + 8, y: y + 36, class: "dag-meta" });
    const best =
      node.bestTimeMs !== null ? `${node.bestTimeMs.toFixed(3)} ms` : "unevaluated";
    meta.textContent = `${node.verdict} | ${best}`;
    group.appendChild(meta);
    if (node.tags.length) {
      const tags = svgEl("text", { x: x + 8, y: y + 50, class: "dag-tags" });
      tags.textContent = node.tags.map((t) => `#${t}`).join(" ");
      group.appendChild(tags);
    }
    group.addEventListener("click", () => onSelect(node.id));
    svg.appendChild(group);
  }
  container.appendChild(svg);
}

const CHART_W = 560;
const CHART_H = 220;
const PAD = 36;

function polyline(points: SeriesPoint[], max: number, cls: string): SVGElement {
  const step = points.length > 1 ? (CHART_W - 2 * PAD) / (points.length - 1) : 0;
  const coords = points
    .map((p) => {
      const x = PAD + p.index * step;
      const y = CHART_H - PAD - (p.value / max) * (CHART_H - 2 * PAD);
      return `${x},${y}`;
    })
    .join(" ");
  return svgEl("polyline", { points: coords, class: cls, fill: "none" });
}

export function renderTrajectory(
  container: HTMLElement,
  series: TrajectorySeries | null,
  errorMessage: string | null = null,
): void {
  container.textContent = "";
  if (errorMessage) {
    const note = document.createElement("p");
    note.className = "chart-error";
    note.title = errorMessage;
    note.textContent = errorMessage;
    container.appendChild(note);
    return;
  }
  if (!series || series.cumulative.length === 0) {
    const note = document.createElement("p");
    note.className = "empty-state";
    note.textContent = "Select a checkpoint to chart its trajectory.";
    container.appendChild(note);
    return;
  }
  const max = Math.max(
    1,
    ...series.cumulative.map((p) => p.value),
    ...series.step.map((p) => p.value),
  );
  const svg = svgEl("svg", { width: CHART_W, height: CHART_H, class: "chart" });
  // unit line: below it a step is a regression
  const unitY = CHART_H - PAD - (1 / max) * (CHART_H - 2 * PAD);
  svg.appendChild(
    svgEl("line", { x1: PAD, y1: unitY, x2: CHART_W - PAD, y2: unitY, class: "unit-line" }),
  );
  svg.appendChild(polyline(series.cumulative, max, "series-cumulative"));
  svg.appendChild(polyline(series.step, max, "series-step"));

  const step =
    series.cumulative.length > 1
      ? (CHART_W - 2 * PAD) / (series.cumulative.length - 1)
      : 0;
  for (const [cls, points] of [
    ["point-cumulative", series.cumulative],
    ["point-step", series.step],
  ] as const) {
    for (const p of points) {
      const x = PAD + p.index * step;
      const y = CHART_H - PAD - (p.value / max) * (CHART_H - 2 * PAD);
      const dot = svgEl("circle", {
        cx: x,
        cy: y,
        r: 4,
        class: cls + (p.regression ? " regression" : ""),
        "data-series": cls === "point-cumulative" ? "cumulative" : "step",
        "data-value": p.value,
      });
      const tip = svgEl("title", {});
      tip.textContent = `${p.label}: ${formatSpeedup(p.value)}`;
      dot.appendChild(tip);
      svg.appendChild(dot);
    }
  }
  container.appendChild(svg);
}

export function renderJobs(container: HTMLElement, jobs: TrackedJob[]): void {
  container.textContent = "";
  for (const job of jobs) {
    const card = document.createElement("div");
    card.className = `job-card job-${job.state}`;
    card.dataset.jobId = job.id;
    const head = document.createElement("div");
    head.className = "job-head";
    head.textContent = `${job.kind} ${job.label} — ${job.state}`;
    card.appendChild(head);
    if (job.attempts.length) {
      const log = document.createElement("ul");
      log.className = "attempt-log";
      for (const attempt of job.attempts) {
        const item = document.createElement("li");
        item.textContent =
          `pass ${attempt.pass_index} attempt ${attempt.attempt}: ${attempt.status}` +
          (attempt.stderr_excerpt ? ` — ${attempt.stderr_excerpt}` : "");
        log.appendChild(item);
      }
      card.appendChild(log);
    } else if (job.error) {
      const err = document.createElement("pre");
      err.className = "job-error";
      err.textContent = job.error;
      card.appendChild(err);
    }
    container.appendChild(card);
  }
}

export function renderDiff(container: HTMLElement, diff: DiffPayload | null): void {
  container.textContent = "";
  if (!diff) return;
  if (diff.empty) {
    const note = document.createElement("p");
    note.className = "empty-state";
    note.textContent = "Selected checkpoints are identical.";
    container.appendChild(note);
    return;
  }
  const sections: Array<[string, string]> = [
    ...Object.entries(diff.regions),
    ["spec", diff.spec],
  ];
  for (const [kind, text] of sections) {
    if (!text) continue;
    const details = document.createElement("details");
    details.open = container.childElementCount === 0; // first changed region
    const summary = document.createElement("summary");
    summary.textContent = kind;
    details.appendChild(summary);
    const row = document.createElement("div");
    row.className = "diff-row";
    const left = document.createElement("pre");
    const right = document.createElement("pre");
    left.className = "diff-old";
    right.className = "diff-new";
    for (const line of text.split("\n")) {
      if (line.startsWith("---") || line.startsWith("+++") || line.startsWith("@@")) {
        continue;
      } else if (line.startsWith("-")) {
        left.textContent += line.slice(1) + "\n";
      } else if (line.startsWith("+")) {
        right.textContent += line.slice(1) + "\n";
      } else {
        left.textContent += line.replace(/^ /, "") + "\n";
        right.textContent += line.replace(/^ /, "") + "\n";
      }
    }
    details.appendChild(row);
    row.appendChild(left);
    row.appendChild(right);
    container.appendChild(details);
  }
  if (Object.keys(diff.metadata).length) {
    const meta = document.createElement("pre");
    meta.className = "diff-metadata";
    meta.textContent = JSON.stringify(diff.metadata, null, 2);
    container.appendChild(meta);
  }
}

export function renderBanner(container: HTMLElement, message: string | null): void {
  container.textContent = message ?? "";
  container.classList.toggle("visible", message !== null);
}

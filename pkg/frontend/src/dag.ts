// Lineage-forest layout: pure function from the checkpoint listing to
// positioned nodes and edges, ready for SVG rendering.

import type { CheckpointSummary } from "./types.js";

export interface DagNode {
  id: string;
  short: string;
  title: string;
  verdict: string;
  bestTimeMs: number | null;
  depth: number;
  lane: number;
  tags: string[];
}

export interface DagEdge {
  from: string;
  to: string;
}

export interface DagLayout {
  nodes: DagNode[];
  edges: DagEdge[];
}

export function buildDagLayout(
  checkpoints: CheckpointSummary[],
  refs: Record<string, string> = {},
): DagLayout {
  const byId = new Map(checkpoints.map((c) => [c.id, c]));
  const depths = new Map<string, number>();

  const depthOf = (id: string): number => {
    const cached = depths.get(id);
    if (cached !== undefined) return cached;
    const ckpt = byId.get(id);
    const depth =
      !ckpt || ckpt.parent === null || !byId.has(ckpt.parent)
        ? 0
        : depthOf(ckpt.parent) + 1;
    depths.set(id, depth);
    return depth;
  };

  const tagsById = new Map<string, string[]>();
  for (const [name, id] of Object.entries(refs)) {
    const tags = tagsById.get(id) ?? [];
    tags.push(name);
    tagsById.set(id, tags.sort());
  }

  const laneCounters = new Map<number, number>();
  const nodes: DagNode[] = [];
  const edges: DagEdge[] = [];
  for (const ckpt of checkpoints) {
    const depth = depthOf(ckpt.id);
    const lane = laneCounters.get(depth) ?? 0;
    laneCounters.set(depth, lane + 1);
    nodes.push({
      id: ckpt.id,
      short: ckpt.short,
      title: ckpt.transformation_name ?? ckpt.label ?? "seed",
      verdict: ckpt.validation_verdict ?? "unvalidated",
      bestTimeMs: ckpt.best_time_ms,
      depth,
      lane,
      tags: tagsById.get(ckpt.id) ?? [],
    });
    if (ckpt.parent !== null && byId.has(ckpt.parent)) {
      edges.push({ from: ckpt.parent, to: ckpt.id });
    }
  }
  return { nodes, edges };
}

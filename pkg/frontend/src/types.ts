// Mirrors of the HTTP API resources. The client renders these verbatim;
// every number shown in the UI is traceable to one of these fields.

export interface CheckpointSummary {
  id: string;
  short: string;
  parent: string | null;
  transformation_name: string | null;
  created_at: string;
  label: string;
  note: string;
  best_time_ms: number | null;
  best_gflops: number | null;
  validation_verdict: string | null;
}

export interface CheckpointListing {
  checkpoints: CheckpointSummary[];
  refs: Record<string, string>;
}

export interface TrajectoryStep {
  id: string;
  short: string;
  transformation_name: string | null;
  best_time_ms: number;
  cumulative_speedup: number;
  step_speedup: number;
  best_gflops: number | null;
  percent_of_reference: number | null;
}

export interface TrajectoryPayload {
  steps: TrajectoryStep[];
}

export interface TransformationSummary {
  name: string;
  description: string;
  passes: number;
  llm_calls: number;
  new_tuning: string[];
  backend_only: string[] | null;
}

export interface DiffPayload {
  regions: Record<string, string>;
  spec: string;
  metadata: Record<string, unknown>;
  empty: boolean;
}

export type JobState = "queued" | "running" | "done" | "failed";

export interface JobPayload {
  id: string;
  kind: string;
  state: JobState;
  result?: Record<string, unknown>;
  error?: string;
}

export interface AttemptRecord {
  pass_index: number;
  attempt: number;
  status: string;
  stderr_excerpt: string;
}

// Job tracking: submitted jobs are polled until terminal; a completed job
// triggers exactly one refresh of the DAG. Poll failures back off
// exponentially and recover on the next success.

import type { AttemptRecord, JobPayload, JobState } from "./types.js";

export interface TrackedJob {
  id: string;
  kind: string;
  label: string;
  state: JobState;
  attempts: AttemptRecord[];
  error: string | null;
  submittedAt: number;
  refreshed: boolean;
}

export const BASE_POLL_MS = 1000;
export const MAX_POLL_MS = 8000;

export function nextPollDelay(current: number, failed: boolean): number {
  if (!failed) return BASE_POLL_MS;
  return Math.min(current * 2, MAX_POLL_MS);
}

export function parseAttempts(job: JobPayload): AttemptRecord[] {
  if (job.state === "done" && job.result) {
    const attempts = (job.result as { attempts?: AttemptRecord[] }).attempts;
    return attempts ?? [];
  }
  if (job.state === "failed" && job.error) {
    // transform failures carry a JSON payload inside the error string
    const start = job.error.indexOf("{");
    if (start >= 0) {
      try {
        const parsed = JSON.parse(job.error.slice(start));
        if (Array.isArray(parsed.attempts)) return parsed.attempts;
      } catch {
        // free-form error; no structured attempts
      }
    }
  }
  return [];
}

export class JobTracker {
  jobs: TrackedJob[] = [];

  submit(id: string, kind: string, label: string, now: number): TrackedJob {
    const job: TrackedJob = {
      id,
      kind,
      label,
      state: "queued",
      attempts: [],
      error: null,
      submittedAt: now,
      refreshed: false,
    };
    this.jobs.push(job); // submission order is render order
    return job;
  }

  /** Applies a poll result; returns true when the DAG should refresh. */
  update(payload: JobPayload): boolean {
    const job = this.jobs.find((j) => j.id === payload.id);
    if (!job) return false;
    job.state = payload.state;
    job.attempts = parseAttempts(payload);
    job.error = payload.error ?? null;
    if ((payload.state === "done" || payload.state === "failed") && !job.refreshed) {
      job.refreshed = true;
      return payload.state === "done";
    }
    return false;
  }

  pending(): TrackedJob[] {
    return this.jobs.filter((j) => j.state === "queued" || j.state === "running");
  }
}

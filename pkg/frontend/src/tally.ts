/** Live per-tag agreement tally: polls the report endpoint and keeps the
 * latest per-column (agreed, done) counts.  Stale data is tolerated. */

import { ApiClient, PerTagReport } from "./api.js";

export const TAG_ORDER = ["M1", "M2", "M3", "M4", "M5", "M6", "M7", "M8", "M9", "M10", "M11"];

export class TallyPoller {
  private latest: PerTagReport = {};
  private timer: ReturnType<typeof setInterval> | null = null;
  private listeners: Array<(r: PerTagReport) => void> = [];

  constructor(
    private api: ApiClient,
    private runId: string,
    private intervalMs = 5000,
  ) {}

  onChange(fn: (r: PerTagReport) => void): void {
    this.listeners.push(fn);
  }

  current(): PerTagReport {
    return this.latest;
  }

  async poll(): Promise<void> {
    try {
      this.latest = await this.api.fetchPerTagReport(this.runId);
      for (const fn of this.listeners) fn(this.latest);
    } catch {
      // keep the previous tally; the next poll may succeed
    }
  }

  start(): void {
    if (this.timer !== null) return;
    void this.poll();
    this.timer = setInterval(() => void this.poll(), this.intervalMs);
  }

  stop(): void {
    if (this.timer !== null) {
      clearInterval(this.timer);
      this.timer = null;
    }
  }
}

/** Rows for the tally table: [tag, {column -> "agreed/done"}]. */
export function tallyRows(report: PerTagReport): Array<[string, Record<string, string>]> {
  const columns = Object.keys(report).sort();
  return TAG_ORDER.map((tag) => {
    const row: Record<string, string> = {};
    for (const col of columns) {
      const counts = report[col][tag];
      if (counts) row[col] = `${counts[0]}/${counts[1]}`;
    }
    return [tag, row];
  });
}

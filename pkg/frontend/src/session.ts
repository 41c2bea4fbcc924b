/** Adjudication session state: the pending queue, optimistic submits with
 * rollback, and an offline buffer flushed on reconnect.  The service is the
 * source of truth; nothing here persists across reloads. */

import { ApiClient, ApiError, QueueItem } from "./api.js";

export interface PendingSubmit {
  item: QueueItem;
  verdict: 1 | -1;
}

export interface SessionState {
  current: QueueItem | null;
  done: number;
  total: number;
  buffered: number;
  error: string | null;
}

export class AdjudicationSession {
  private items: QueueItem[] = [];
  private done = 0;
  private total = 0;
  private buffer: PendingSubmit[] = [];
  private error: string | null = null;
  private listeners: Array<(s: SessionState) => void> = [];

  constructor(
    private api: ApiClient,
    readonly runId: string,
    readonly adjudicatorId: string,
  ) {}

  onChange(fn: (s: SessionState) => void): void {
    this.listeners.push(fn);
  }

  state(): SessionState {
    return {
      current: this.items[0] ?? null,
      done: this.done,
      total: this.total,
      buffered: this.buffer.length,
      error: this.error,
    };
  }

  private notify(): void {
    const s = this.state();
    for (const fn of this.listeners) fn(s);
  }

  /** Load (or reload) the pending queue; resumes at the first pending item. */
  async load(): Promise<void> {
    const q = await this.api.fetchQueue(this.runId, this.adjudicatorId);
    this.items = q.items;
    this.done = q.done;
    this.total = q.total;
    this.error = null;
    this.notify();
  }

  /** Submit a verdict for the current item and advance optimistically.
   *
   * Server rejection (4xx/5xx) rolls the item back to the front of the queue
   * and surfaces the error.  A network failure buffers the submit instead, so
   * the session keeps moving offline; call flush() on reconnect. */
  async submit(verdict: 1 | -1): Promise<void> {
    const item = this.items[0];
    if (!item) return;
    this.items = this.items.slice(1);
    this.done += 1;
    this.error = null;
    this.notify();
    try {
      await this.api.submitAdjudication(this.runId, {
        record_id: item.record_id,
        tag: item.tag,
        adjudicator_id: this.adjudicatorId,
        verdict,
      });
    } catch (e) {
      if (e instanceof ApiError) {
        this.items = [item, ...this.items];
        this.done -= 1;
        this.error = e.message;
      } else {
        this.buffer.push({ item, verdict });
      }
      this.notify();
    }
  }

  /** Retry buffered offline submits in order; stops at the first failure. */
  async flush(): Promise<void> {
    while (this.buffer.length > 0) {
      const { item, verdict } = this.buffer[0];
      try {
        await this.api.submitAdjudication(this.runId, {
          record_id: item.record_id,
          tag: item.tag,
          adjudicator_id: this.adjudicatorId,
          verdict,
        });
      } catch (e) {
        if (e instanceof ApiError) {
          // server refused a buffered item; drop it and roll the queue back
          this.buffer.shift();
          this.items = [item, ...this.items];
          this.done -= 1;
          this.error = e.message;
          this.notify();
          continue;
        }
        return; // still offline
      }
      this.buffer.shift();
    }
    this.notify();
  }
}

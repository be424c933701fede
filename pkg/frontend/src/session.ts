/** Annotation session state machine, independent of any DOM.
 *
 * Drives the loop: fetch task -> annotator picks a side -> vote submitted
 * (buffered and retried across network failures; the server's per-
 * (task, annotator) idempotency makes resubmission safe) -> next task.
 * A 204 from the queue ends the session with the personal vote count.
 */

import { NetworkError, StudyApi } from "./api.js";
import type { Choice, TaskPayload, VoteBody } from "./types.js";

export type SessionState =
  | { kind: "idle" }
  | { kind: "loading" }
  | { kind: "task"; task: TaskPayload }
  | { kind: "submitting"; task: TaskPayload }
  | { kind: "retrying"; vote: VoteBody; attempt: number }
  | { kind: "done"; votesCast: number }
  | { kind: "failed"; message: string };

export interface SessionOptions {
  /** Clock used for latency measurement; injectable for tests. */
  now?: () => number;
  /** Delay between vote retries, ms; grows linearly with the attempt. */
  retryDelayMs?: number;
  /** Upper bound on vote retries before giving up; Infinity by default. */
  maxRetries?: number;
  sleep?: (ms: number) => Promise<void>;
  onChange?: (state: SessionState) => void;
}

const defaultSleep = (ms: number) => new Promise<void>((r) => setTimeout(r, ms));

export class AnnotationSession {
  private state_: SessionState = { kind: "idle" };
  private votesCast_ = 0;
  private shownAt = 0;
  private readonly now: () => number;
  private readonly retryDelayMs: number;
  private readonly maxRetries: number;
  private readonly sleep: (ms: number) => Promise<void>;
  private readonly onChange?: (state: SessionState) => void;

  constructor(
    private readonly api: StudyApi,
    opts: SessionOptions = {},
  ) {
    this.now = opts.now ?? (() => Date.now());
    this.retryDelayMs = opts.retryDelayMs ?? 1000;
    this.maxRetries = opts.maxRetries ?? Number.POSITIVE_INFINITY;
    this.sleep = opts.sleep ?? defaultSleep;
    this.onChange = opts.onChange;
  }

  get state(): SessionState {
    return this.state_;
  }

  get votesCast(): number {
    return this.votesCast_;
  }

  get currentTask(): TaskPayload | null {
    return this.state_.kind === "task" || this.state_.kind === "submitting"
      ? this.state_.task
      : null;
  }

  private setState(next: SessionState): void {
    this.state_ = next;
    this.onChange?.(next);
  }

  /** Fetch the first (or next) task. */
  async start(): Promise<void> {
    await this.advance();
  }

  private async advance(): Promise<void> {
    this.setState({ kind: "loading" });
    let task: TaskPayload | null;
    try {
      task = await this.api.nextTask();
    } catch (e) {
      this.setState({ kind: "failed", message: String(e) });
      return;
    }
    if (task === null) {
      this.setState({ kind: "done", votesCast: this.votesCast_ });
      return;
    }
    this.shownAt = this.now();
    this.setState({ kind: "task", task });
  }

  /** Cast the forced-choice vote for the side the annotator picked. */
  async choose(choice: Choice): Promise<void> {
    if (this.state_.kind !== "task") return;
    const task = this.state_.task;
    const vote: VoteBody = {
      task_id: task.task_id,
      choice,
      latency_ms: Math.max(0, Math.round(this.now() - this.shownAt)),
    };
    this.setState({ kind: "submitting", task });
    // The vote is held locally until the server acknowledges it; duplicate
    // acks count as success (the ledger kept the first submission).
    for (let attempt = 1; ; attempt++) {
      try {
        await this.api.submitVote(vote);
        break;
      } catch (e) {
        if (e instanceof NetworkError && attempt <= this.maxRetries) {
          this.setState({ kind: "retrying", vote, attempt });
          await this.sleep(this.retryDelayMs * attempt);
          continue;
        }
        this.setState({ kind: "failed", message: String(e) });
        return;
      }
    }
    this.votesCast_ += 1;
    await this.advance();
  }

  /** Skip a task whose media cannot be played; releases the lease. */
  async skipBrokenMedia(): Promise<void> {
    const task = this.currentTask;
    if (!task) return;
    await this.api.releaseLease(task.task_id);
    await this.advance();
  }
}

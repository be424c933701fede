/** Thin typed client for the study service endpoints the UI touches. */

import type { RankingPayload, TaskPayload, VoteAck, VoteBody } from "./types.js";

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(
    message: string,
    public readonly status: number,
  ) {
    super(message);
  }
}

/** Network-level failure (connection refused, timeout); retryable. */
export class NetworkError extends Error {}

export class StudyApi {
  constructor(
    private readonly baseUrl: string,
    private readonly studyId: string,
    private readonly annotatorId: string,
    private readonly fetchImpl: FetchLike = (url, init) => fetch(url, init),
  ) {}

  private headers(json = false): Record<string, string> {
    const h: Record<string, string> = { "X-Annotator-Id": this.annotatorId };
    if (json) h["Content-Type"] = "application/json";
    return h;
  }

  private async request(url: string, init?: RequestInit): Promise<Response> {
    let resp: Response;
    try {
      resp = await this.fetchImpl(url, init);
    } catch (e) {
      throw new NetworkError(String(e));
    }
    return resp;
  }

  /** Next task for this annotator, or null when the queue is exhausted. */
  async nextTask(): Promise<TaskPayload | null> {
    const url = `${this.baseUrl}/studies/${this.studyId}/tasks/next`;
    const resp = await this.request(url, { headers: this.headers() });
    if (resp.status === 204) return null;
    if (!resp.ok) throw new ApiError(`next task failed: ${resp.status}`, resp.status);
    return (await resp.json()) as TaskPayload;
  }

  async submitVote(vote: VoteBody): Promise<VoteAck> {
    const url = `${this.baseUrl}/studies/${this.studyId}/votes`;
    const resp = await this.request(url, {
      method: "POST",
      headers: this.headers(true),
      body: JSON.stringify(vote),
    });
    if (!resp.ok) throw new ApiError(`vote rejected: ${resp.status}`, resp.status);
    return (await resp.json()) as VoteAck;
  }

  /** Give a task back (broken media); best effort. */
  async releaseLease(taskId: string): Promise<void> {
    const url = `${this.baseUrl}/studies/${this.studyId}/leases/${taskId}/release`;
    try {
      await this.request(url, { method: "POST", headers: this.headers() });
    } catch {
      // Advisory: losing the release only delays the task until lease expiry.
    }
  }

  async ranking(): Promise<RankingPayload> {
    const url = `${this.baseUrl}/studies/${this.studyId}/ranking`;
    const resp = await this.request(url, { headers: this.headers() });
    if (!resp.ok) throw new ApiError(`ranking failed: ${resp.status}`, resp.status);
    return (await resp.json()) as RankingPayload;
  }

  mediaUrl(path: string): string {
    return path.startsWith("http") ? path : `${this.baseUrl}${path}`;
  }
}

/** Wire types for the study service. */

export type Choice = "left" | "right";

/** Task payload as served; deliberately carries no competitor identities. */
export interface TaskPayload {
  task_id: string;
  prompt: string;
  axis: string;
  question: string;
  left_media: string;
  right_media: string;
}

export interface VoteBody {
  task_id: string;
  choice: Choice;
  latency_ms: number;
}

export interface VoteAck {
  accepted: boolean;
  duplicate: boolean;
}

export interface CompetitorRating {
  competitor: string;
  axis: string;
  mean: number;
  std: number;
  games: number;
}

export interface RankingPayload {
  ratings: CompetitorRating[];
  aggregated: Record<string, number>;
  flagged_annotators: string[];
  vote_count: number;
}

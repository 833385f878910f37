/** JSON shapes of the reflex-agent HTTP API (see service.py and store.py). */

export interface SchemaInfo {
  name: string;
  aspects: string[];
  vocab_size: number;
  question_templates: string[];
  /** value_names[aspectIndex][valueId] — toy vocab for dropdowns and cards */
  value_names: string[][];
}

export interface AspectVectorJson {
  schema: string;
  slots: (number | null)[];
}

export interface SessionView {
  id: string;
  persona: string | null;
  schema: string;
  round: number;
  open_questions: QuestionJson[];
  status: "open" | "closed";
}

export interface PromptJson {
  round: number;
  text: string;
  structured: AspectVectorJson | null;
}

export type ImagePayloadJson =
  | { kind: "toy"; vector: AspectVectorJson }
  | { kind: "bytes"; sha256: string };

export interface ImageJson {
  round: number;
  payload: ImagePayloadJson;
  seed: number;
  trajectory: unknown;
}

export interface CaptionJson {
  round: number;
  captions: Record<string, string>;
  structured: AspectVectorJson | null;
}

export interface AmbiguityJson {
  round: number;
  scores: Record<string, number>;
  candidates: string[];
  chosen: string;
}

export interface QuestionJson {
  round: number;
  aspect: string;
  text: string;
  source: string;
}

/** One line of a session's append-only event log. */
export interface SessionEvent {
  seq: number;
  session_id: string;
  ts_ms: number;
  type: string;
  payload: Record<string, unknown>;
}

export interface EventsResponse {
  events: SessionEvent[];
  last_seq: number;
}

export interface PreferenceResponse {
  accepted: number;
  pairs_until_training: number;
  training: TrainingReport | null;
}

export interface TrainingReport {
  pairs: number;
  steps: number;
  initial_loss: number;
  final_loss: number;
  epoch_losses: number[];
  kl_per_step: number[];
  win_rate_vs_ref: number;
}

export interface CardCell {
  aspect: string;
  value: string;
  color: string;
}

export type RenderedImage =
  | { kind: "toy"; seed: number; vector: AspectVectorJson; card: CardCell[] }
  | { kind: "bytes"; seed: number; sha256: string };

export interface NeglectReport {
  sim: number;
  initial_sim: number;
  token_list: string[];
  iterations_used: number;
  invoked: boolean;
}

export type RefineResponse =
  | { tool: "dpo"; report: TrainingReport }
  | { tool: "aae"; image: RenderedImage; report: NeglectReport };

/** POST /sessions/{id}/message response: the full round plus session view. */
export interface RoundResponse {
  round: number;
  prompt: PromptJson;
  image: RenderedImage;
  captions: CaptionJson;
  ambiguity: AmbiguityJson;
  question: QuestionJson;
  session: SessionView;
}

export interface ApiErrorBody {
  detail: { code: string; message: string };
}


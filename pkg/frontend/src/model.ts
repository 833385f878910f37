/** Pure event-sourced view model: the whole UI renders from a fold over the
 * session's event log, so a page reload (GET /events?since=0) rebuilds the
 * exact same view the live session produced. */

import type {
  AmbiguityJson,
  AspectVectorJson,
  CaptionJson,
  ImagePayloadJson,
  NeglectReport,
  PromptJson,
  QuestionJson,
  SessionEvent,
} from "./types.js";

export interface RoundView {
  round: number;
  prompt?: PromptJson;
  image?: { payload: ImagePayloadJson; seed: number };
  captions?: CaptionJson;
  ambiguity?: AmbiguityJson;
  question?: QuestionJson;
}

export interface ChatEntry {
  kind: "user" | "agent";
  round: number;
  text: string;
}

export interface Tool2View {
  round: number;
  report: NeglectReport;
  image: { payload: ImagePayloadJson; seed: number };
}

export interface TrainingProgress {
  epoch: number;
  epochs: number;
  mean_loss: number;
  beta: number;
}

export interface ViewModel {
  sessionId: string | null;
  schemaName: string | null;
  persona: string | null;
  rounds: RoundView[];
  chat: ChatEntry[];
  preferences: { winner: number; loser: number }[];
  pairsAccepted: number;
  /** training batch size, inferred from the first auto-training boundary */
  inferredBatch: number | null;
  trainingUpdates: TrainingProgress[];
  tool2Runs: Tool2View[];
  closed: boolean;
  lastSeq: number;
  /** transient: whether the previous event was a preference (links the
   * auto-training updates that follow it to the batch boundary) */
  lastEventWasPreference?: boolean;
}

export function emptyModel(): ViewModel {
  return {
    sessionId: null,
    schemaName: null,
    persona: null,
    rounds: [],
    chat: [],
    preferences: [],
    pairsAccepted: 0,
    inferredBatch: null,
    trainingUpdates: [],
    tool2Runs: [],
    closed: false,
    lastSeq: 0,
  };
}

function roundAt(model: ViewModel, round: number): RoundView {
  while (model.rounds.length < round) {
    model.rounds.push({ round: model.rounds.length + 1 });
  }
  const view = model.rounds[round - 1];
  if (!view) throw new Error(`round ${round} out of range`);
  return view;
}

function asNumber(value: unknown, what: string): number {
  if (typeof value !== "number") throw new Error(`expected number for ${what}`);
  return value;
}

/** Applies one event in place; unknown event types are ignored (forward
 * compatibility — the log may gain bookkeeping types). */
export function applyEvent(model: ViewModel, event: SessionEvent): ViewModel {
  const p = event.payload;
  switch (event.type) {
    case "session_created": {
      model.sessionId = p["id"] as string;
      model.schemaName = p["schema"] as string;
      model.persona = (p["persona"] as string | null) ?? null;
      break;
    }
    case "user_message": {
      const round = asNumber(p["round"], "user_message.round");
      model.chat.push({ kind: "user", round, text: p["text"] as string });
      break;
    }
    case "prompt": {
      const round = asNumber(p["round"], "prompt.round");
      roundAt(model, round).prompt = p as unknown as PromptJson;
      break;
    }
    case "generation": {
      const round = asNumber(p["round"], "generation.round");
      roundAt(model, round).image = {
        payload: p["payload"] as ImagePayloadJson,
        seed: asNumber(p["seed"], "generation.seed"),
      };
      break;
    }
    case "caption": {
      const round = asNumber(p["round"], "caption.round");
      roundAt(model, round).captions = p as unknown as CaptionJson;
      break;
    }
    case "ambiguity": {
      const round = asNumber(p["round"], "ambiguity.round");
      roundAt(model, round).ambiguity = p as unknown as AmbiguityJson;
      break;
    }
    case "question": {
      const round = asNumber(p["round"], "question.round");
      const question = p as unknown as QuestionJson;
      roundAt(model, round).question = question;
      model.chat.push({ kind: "agent", round, text: question.text });
      break;
    }
    case "preference": {
      model.preferences.push({
        winner: asNumber(p["winner_round"], "preference.winner_round"),
        loser: asNumber(p["loser_round"], "preference.loser_round"),
      });
      model.pairsAccepted = asNumber(p["count"], "preference.count");
      model.lastEventWasPreference = true;
      model.lastSeq = event.seq;
      return model;
    }
    case "training_update": {
      if (model.lastEventWasPreference && model.inferredBatch === null) {
        // auto-training fires when count % batch == 0; the first boundary
        // after `count` pairs pins the batch size exactly
        model.inferredBatch = model.pairsAccepted;
      }
      model.trainingUpdates.push(p as unknown as TrainingProgress);
      break;
    }
    case "tool2_invocation": {
      const image = p["image"] as { payload: ImagePayloadJson; seed: number };
      model.tool2Runs.push({
        round: asNumber(p["round"], "tool2_invocation.round"),
        report: p["report"] as unknown as NeglectReport,
        image: { payload: image.payload, seed: image.seed },
      });
      break;
    }
    case "session_closed": {
      model.closed = true;
      break;
    }
    default:
      break; // bookkeeping types are allowed to pass through
  }
  model.lastEventWasPreference = false;
  model.lastSeq = event.seq;
  return model;
}

export function foldEvents(events: SessionEvent[], base?: ViewModel): ViewModel {
  const model = base ?? emptyModel();
  for (const event of events) applyEvent(model, event);
  return model;
}

/** Pairs still needed before the next automatic training run, when the
 * batch size is known (inferred from an observed training boundary). */
export function pairsUntilTraining(model: ViewModel): number | null {
  if (model.inferredBatch === null || model.inferredBatch <= 0) return null;
  return model.inferredBatch - (model.pairsAccepted % model.inferredBatch);
}

/** The question currently awaiting an answer, if any. */
export function openQuestion(model: ViewModel): QuestionJson | null {
  if (model.closed || model.rounds.length === 0) return null;
  const last = model.rounds[model.rounds.length - 1];
  return last?.question ?? null;
}

/** The latest two completed rounds, for side-by-side preference voting. */
export function preferenceCandidates(model: ViewModel): [RoundView, RoundView] | null {
  const complete = model.rounds.filter((r) => r.image !== undefined);
  if (complete.length < 2) return null;
  const a = complete[complete.length - 2];
  const b = complete[complete.length - 1];
  if (!a || !b) return null;
  return [a, b];
}

/** Deterministic color for an (aspect, value) pair — FNV-1a hash to HSL.
 * Client-side so that the same event stream always yields the same DOM. */
export function swatchColor(aspect: string, value: string): string {
  let hash = 0x811c9dc5;
  const key = `${aspect}=${value}`;
  for (let i = 0; i < key.length; i++) {
    hash ^= key.charCodeAt(i);
    hash = Math.imul(hash, 0x01000193) >>> 0;
  }
  const hue = hash % 360;
  const light = 42 + (Math.floor(hash / 360) % 20);
  return `hsl(${hue}, 65%, ${light}%)`;
}

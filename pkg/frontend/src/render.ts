/** Pure DOM rendering: ViewModel (+ static schema info + transient notices)
 * in, detached element tree out. No listeners are attached here — controls
 * carry data-action attributes and app.ts dispatches on them — so the same
 * model always renders the identical DOM structure. */

import {
  openQuestion,
  pairsUntilTraining,
  preferenceCandidates,
  swatchColor,
  type RoundView,
  type ViewModel,
} from "./model.js";
import type { ImagePayloadJson, SchemaInfo } from "./types.js";

export interface RenderContext {
  schemas: SchemaInfo[];
  /** countdown from the latest POST /preference response, when fresher than
   * what the event fold can infer */
  livePairsUntilTraining: number | null;
  busy: boolean;
  notice: string | null;
  threshold: number;
  imageUrl: (sha256: string) => string;
}

function el(
  doc: Document,
  tag: string,
  attrs: Record<string, string> = {},
  children: (Node | string)[] = [],
): HTMLElement {
  const node = doc.createElement(tag);
  for (const [key, value] of Object.entries(attrs)) node.setAttribute(key, value);
  for (const child of children) {
    node.append(typeof child === "string" ? doc.createTextNode(child) : child);
  }
  return node;
}

function schemaByName(ctx: RenderContext, name: string | null): SchemaInfo | null {
  return ctx.schemas.find((s) => s.name === name) ?? null;
}

export function renderImage(
  doc: Document,
  payload: ImagePayloadJson,
  schema: SchemaInfo | null,
  ctx: RenderContext,
): HTMLElement {
  if (payload.kind === "bytes") {
    return el(doc, "img", {
      class: "remote-image",
      src: ctx.imageUrl(payload.sha256),
      alt: `generated image ${payload.sha256.slice(0, 12)}`,
    });
  }
  const cells: HTMLElement[] = [];
  payload.vector.slots.forEach((slot, index) => {
    const aspect = schema?.aspects[index] ?? `aspect ${index}`;
    const value =
      slot === null ? "—" : (schema?.value_names[index]?.[slot] ?? String(slot));
    cells.push(
      el(doc, "div", { class: "cell" }, [
        el(doc, "span", { class: "cell-aspect" }, [aspect]),
        el(doc, "span", {
          class: "cell-swatch",
          style: `background:${swatchColor(aspect, value)}`,
        }),
        el(doc, "span", { class: "cell-value" }, [value]),
      ]),
    );
  });
  return el(doc, "div", { class: "toy-card" }, cells);
}

function renderStart(doc: Document, ctx: RenderContext): HTMLElement {
  const options = ctx.schemas.map((s) =>
    el(doc, "option", { value: s.name }, [`${s.name} (${s.aspects.length} aspects)`]),
  );
  return el(doc, "section", { class: "start-view" }, [
    el(doc, "h2", {}, ["Start a session"]),
    el(doc, "label", {}, ["Schema ", el(doc, "select", { id: "schema-pick" }, options)]),
    el(doc, "label", {}, [
      "Persona ",
      el(doc, "input", { id: "persona-pick", placeholder: "optional persona label" }),
    ]),
    el(doc, "label", {}, [
      "Seed ",
      el(doc, "input", { id: "seed-pick", type: "number", placeholder: "random" }),
    ]),
    el(doc, "button", { "data-action": "start" }, ["Start session"]),
  ]);
}

function renderChat(doc: Document, model: ViewModel, schema: SchemaInfo | null, ctx: RenderContext): HTMLElement {
  const entries = model.chat.map((entry) =>
    el(doc, "div", { class: `turn turn-${entry.kind}`, "data-round": String(entry.round) }, [
      el(doc, "span", { class: "speaker" }, [entry.kind === "user" ? "you" : "agent"]),
      el(doc, "span", { class: "text" }, [entry.text]),
    ]),
  );
  const question = openQuestion(model);
  const vocabOptions: HTMLElement[] = [el(doc, "option", { value: "" }, ["free text…"])];
  if (question && schema) {
    const index = schema.aspects.indexOf(question.aspect);
    for (const value of schema.value_names[index] ?? []) {
      vocabOptions.push(
        el(doc, "option", { value: `${question.aspect}=${value}` }, [value]),
      );
    }
  }
  const disabled: Record<string, string> =
    ctx.busy || model.closed ? { disabled: "" } : {};
  return el(doc, "section", { class: "chat-view" }, [
    el(doc, "div", { class: "chat-log" }, entries),
    el(doc, "form", { class: "answer-form" }, [
      el(doc, "select", { id: "vocab-pick", ...disabled }, vocabOptions),
      el(doc, "input", {
        id: "chat-input",
        placeholder: question ? `answer: ${question.text}` : "Aspect=value, …",
        ...disabled,
      }),
      el(doc, "button", { "data-action": "send", ...disabled }, ["Send"]),
    ]),
  ]);
}

function renderRound(doc: Document, view: RoundView, schema: SchemaInfo | null, ctx: RenderContext): HTMLElement {
  const parts: HTMLElement[] = [el(doc, "h3", {}, [`Round ${view.round}`])];
  if (view.prompt) {
    parts.push(el(doc, "p", { class: "prompt" }, [`prompt: ${view.prompt.text}`]));
  }
  if (view.image) {
    parts.push(renderImage(doc, view.image.payload, schema, ctx));
  }
  if (view.captions) {
    const items = Object.entries(view.captions.captions).map(([aspect, text]) =>
      el(doc, "li", {}, [`${aspect}: ${text}`]),
    );
    parts.push(el(doc, "ul", { class: "captions" }, items));
  }
  if (view.ambiguity) {
    parts.push(
      el(doc, "p", { class: "ambiguity" }, [
        `ambiguous: ${view.ambiguity.candidates.join(", ")} → asking ${view.ambiguity.chosen}`,
      ]),
    );
  }
  return el(doc, "article", { class: "round", "data-round": String(view.round) }, parts);
}

function renderPreference(doc: Document, model: ViewModel, schema: SchemaInfo | null, ctx: RenderContext): HTMLElement {
  const candidates = preferenceCandidates(model);
  const countdown = ctx.livePairsUntilTraining ?? pairsUntilTraining(model);
  const header = el(doc, "p", { class: "pairs-note" }, [
    `${model.pairsAccepted} pair(s) recorded`,
    countdown === null ? "" : ` — ${countdown} until training`,
  ]);
  if (!candidates) {
    return el(doc, "section", { class: "preference-view" }, [
      header,
      el(doc, "p", {}, ["Two completed rounds are needed to vote."]),
    ]);
  }
  const [left, right] = candidates;
  const disabled: Record<string, string> =
    ctx.busy || model.closed ? { disabled: "" } : {};
  const side = (view: RoundView, other: RoundView): HTMLElement =>
    el(doc, "div", { class: "candidate" }, [
      el(doc, "h4", {}, [`Round ${view.round}`]),
      view.image ? renderImage(doc, view.image.payload, schema, ctx) : el(doc, "p", {}, ["—"]),
      el(
        doc,
        "button",
        {
          "data-action": "prefer",
          "data-winner": String(view.round),
          "data-loser": String(other.round),
          ...disabled,
        },
        [`Prefer round ${view.round}`],
      ),
    ]);
  return el(doc, "section", { class: "preference-view" }, [
    header,
    el(doc, "div", { class: "candidates" }, [side(left, right), side(right, left)]),
  ]);
}

function renderRefine(doc: Document, model: ViewModel, schema: SchemaInfo | null, ctx: RenderContext): HTMLElement {
  const disabled: Record<string, string> =
    ctx.busy || model.closed ? { disabled: "" } : {};
  const parts: HTMLElement[] = [
    el(doc, "h3", {}, ["Refine"]),
    el(doc, "button", { "data-action": "refine-dpo", ...disabled }, ["Tool 1: train on preferences"]),
    el(doc, "label", {}, [
      `Tool 2 threshold k=${ctx.threshold.toFixed(2)} `,
      el(doc, "input", {
        id: "threshold-slider",
        type: "range",
        min: "0.5",
        max: "0.95",
        step: "0.01",
        value: String(ctx.threshold),
        ...disabled,
      }),
    ]),
    el(doc, "button", { "data-action": "refine-aae", ...disabled }, ["Tool 2: regenerate"]),
  ];
  const lastTraining = model.trainingUpdates[model.trainingUpdates.length - 1];
  if (lastTraining) {
    parts.push(
      el(doc, "p", { class: "training-note" }, [
        `training: epoch ${lastTraining.epoch}/${lastTraining.epochs}, ` +
          `mean loss ${lastTraining.mean_loss.toFixed(4)}, beta ${lastTraining.beta}`,
      ]),
    );
  }
  const lastTool2 = model.tool2Runs[model.tool2Runs.length - 1];
  if (lastTool2) {
    parts.push(
      el(doc, "div", { class: "tool2-result" }, [
        el(doc, "p", {}, [
          `Tool 2 on round ${lastTool2.round}: ` +
            (lastTool2.report.invoked
              ? `invoked, sim ${lastTool2.report.initial_sim.toFixed(2)} → ` +
                `${lastTool2.report.sim.toFixed(2)} in ${lastTool2.report.iterations_used} step(s)`
              : "not needed (similarity already above k)"),
        ]),
        renderImage(doc, lastTool2.image.payload, schema, ctx),
      ]),
    );
  }
  return el(doc, "section", { class: "refine-view" }, parts);
}

export function render(doc: Document, model: ViewModel, ctx: RenderContext): HTMLElement {
  const root = el(doc, "div", { id: "app-root" });
  const headerBits = [
    el(doc, "h1", {}, ["reflex-agent console"]),
  ];
  if (model.sessionId) {
    headerBits.push(
      el(doc, "p", { class: "session-line" }, [
        `session ${model.sessionId} — schema ${model.schemaName ?? "?"}` +
          (model.persona ? `, persona ${model.persona}` : "") +
          (model.closed ? " (closed)" : ""),
      ]),
    );
  }
  root.append(el(doc, "header", {}, headerBits));
  if (ctx.notice) {
    root.append(el(doc, "div", { class: "notice", role: "alert" }, [ctx.notice]));
  }
  if (!model.sessionId) {
    root.append(renderStart(doc, ctx));
    return root;
  }
  const schema = schemaByName(ctx, model.schemaName);
  const rounds = model.rounds.map((view) => renderRound(doc, view, schema, ctx));
  root.append(
    el(doc, "main", { class: "layout" }, [
      renderChat(doc, model, schema, ctx),
      el(doc, "section", { class: "rounds-view" }, rounds),
    ]),
    renderPreference(doc, model, schema, ctx),
    renderRefine(doc, model, schema, ctx),
  );
  return root;
}

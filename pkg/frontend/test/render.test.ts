import { describe, expect, it } from "vitest";

import { emptyModel, foldEvents } from "../src/model.js";
import { render, type RenderContext } from "../src/render.js";
import type { SessionEvent } from "../src/types.js";
import { fixtureSchemas, goldenEvents } from "./helpers.js";

function ctx(overrides: Partial<RenderContext> = {}): RenderContext {
  return {
    schemas: fixtureSchemas(),
    livePairsUntilTraining: null,
    busy: false,
    notice: null,
    threshold: 0.7,
    imageUrl: (sha) => `/images/${sha}`,
    ...overrides,
  };
}

const created: SessionEvent = {
  seq: 1,
  session_id: "s",
  ts_ms: 0,
  type: "session_created",
  payload: { id: "s", schema: "default", persona: null, rng_seed: 1 },
};

describe("render", () => {
  it("shows the start view before any session exists", () => {
    const root = render(document, emptyModel(), ctx());
    expect(root.querySelector(".start-view")).not.toBeNull();
    expect(root.querySelector(".chat-view")).toBeNull();
    const options = [...root.querySelectorAll("#schema-pick option")].map(
      (o) => (o as HTMLOptionElement).value,
    );
    expect(options).toEqual(["default", "fashion"]);
  });

  it("renders an empty chat for a fresh session", () => {
    const root = render(document, foldEvents([created]), ctx());
    expect(root.querySelector(".chat-log")).not.toBeNull();
    expect(root.querySelectorAll(".chat-log .turn")).toHaveLength(0);
    expect(root.querySelectorAll(".round")).toHaveLength(0);
  });

  it("renders the full recorded transcript: rounds, cards, captions, chat", () => {
    const model = foldEvents(goldenEvents("toy-default-4round"));
    const root = render(document, model, ctx());

    expect(root.querySelectorAll(".round")).toHaveLength(4);
    expect(root.querySelectorAll(".chat-log .turn")).toHaveLength(8);

    const firstCard = root.querySelector(".round[data-round='1'] .toy-card");
    expect(firstCard).not.toBeNull();
    const cells = [...firstCard!.querySelectorAll(".cell")];
    expect(cells).toHaveLength(7);
    const aspects = cells.map((c) => c.querySelector(".cell-aspect")?.textContent);
    expect(aspects).toEqual([
      "Content", "Style", "Background", "Size", "Color", "Perspective", "Other",
    ]);
    // golden round 1 was generated from "mountain"; the card names real values
    expect(cells[0]?.querySelector(".cell-value")?.textContent).toBe("mountain");
    for (const cell of cells) {
      expect(cell.querySelector(".cell-swatch")?.getAttribute("style")).toMatch(/^background:hsl\(/);
    }

    // preference candidates are the last two rounds, with pick buttons
    const buttons = [...root.querySelectorAll("[data-action='prefer']")];
    expect(buttons.map((b) => b.getAttribute("data-winner"))).toEqual(["3", "4"]);
    expect(buttons.map((b) => b.getAttribute("data-loser"))).toEqual(["4", "3"]);
  });

  it("is deterministic: the same event stream renders the identical DOM", () => {
    const events = goldenEvents("toy-default-4round");
    const a = render(document, foldEvents(events), ctx());
    const b = render(document, foldEvents(events), ctx());
    expect(a.outerHTML).toBe(b.outerHTML);
  });

  it("disables the controls while a request is in flight", () => {
    const model = foldEvents(goldenEvents("toy-default-4round"));
    const root = render(document, model, ctx({ busy: true }));
    for (const selector of ["[data-action='send']", "[data-action='prefer']", "[data-action='refine-dpo']"]) {
      expect(root.querySelector(selector)?.hasAttribute("disabled"), selector).toBe(true);
    }
  });

  it("renders an error notice with alert role", () => {
    const root = render(document, emptyModel(), ctx({ notice: "RoundInFlight: busy" }));
    const notice = root.querySelector(".notice");
    expect(notice?.getAttribute("role")).toBe("alert");
    expect(notice?.textContent).toBe("RoundInFlight: busy");
  });

  it("renders remote images from the content-addressed endpoint", () => {
    const model = foldEvents([
      created,
      {
        seq: 2,
        session_id: "s",
        ts_ms: 1,
        type: "generation",
        payload: {
          round: 1,
          payload: { kind: "bytes", sha256: "abc123" },
          seed: 7,
          trajectory: null,
        },
      },
    ]);
    const root = render(document, model, ctx());
    expect(root.querySelector(".remote-image")?.getAttribute("src")).toBe("/images/abc123");
  });

  it("shows the live pairs-until-training countdown when provided", () => {
    const model = foldEvents(goldenEvents("toy-fashion-3round"));
    const root = render(document, model, ctx({ livePairsUntilTraining: 38 }));
    expect(root.querySelector(".pairs-note")?.textContent).toBe(
      "1 pair(s) recorded — 38 until training",
    );
  });

  it("populates the vocab dropdown for the open question's aspect", () => {
    const model = foldEvents(goldenEvents("toy-default-4round"));
    const aspect = model.rounds[3]!.question!.aspect;
    const root = render(document, model, ctx());
    const options = [...root.querySelectorAll("#vocab-pick option")].map(
      (o) => (o as HTMLOptionElement).value,
    );
    expect(options[0]).toBe(""); // free-text choice
    expect(options).toHaveLength(17); // 16 vocab values + free text
    expect(options[1]).toMatch(new RegExp(`^${aspect}=`));
  });
});

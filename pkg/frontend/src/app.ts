/** Controller: owns the ApiClient, the event-folded ViewModel, and the
 * render loop. All controls dispatch through one delegated listener, and
 * every state change re-renders from the model (event-sourced rendering). */

import { ApiClient, ApiError } from "./api.js";
import { emptyModel, foldEvents, openQuestion, type ViewModel } from "./model.js";
import { render, type RenderContext } from "./render.js";
import type { SchemaInfo } from "./types.js";

export interface AppOptions {
  doc: Document;
  mount: HTMLElement;
  api: ApiClient;
  /** long-poll wait; 0 disables the background poll loop (tests pump manually) */
  pollTimeoutMs?: number;
}

export class App {
  readonly api: ApiClient;
  model: ViewModel = emptyModel();
  schemas: SchemaInfo[] = [];
  busy = false;
  notice: string | null = null;
  threshold = 0.7;
  livePairsUntilTraining: number | null = null;

  private readonly doc: Document;
  private readonly mount: HTMLElement;
  private readonly pollTimeoutMs: number;
  private polling = false;
  private attached: string | null = null;

  constructor(options: AppOptions) {
    this.doc = options.doc;
    this.mount = options.mount;
    this.api = options.api;
    this.pollTimeoutMs = options.pollTimeoutMs ?? 25_000;
    this.mount.addEventListener("click", (event) => {
      void this.onClick(event);
    });
    this.mount.addEventListener("submit", (event) => event.preventDefault());
    this.mount.addEventListener("change", (event) => this.onChange(event));
  }

  async init(sessionId: string | null = null): Promise<void> {
    try {
      this.schemas = await this.api.listSchemas();
    } catch (error) {
      this.notice = describe(error);
    }
    if (sessionId) await this.attach(sessionId);
    this.redraw();
  }

  /** Rebuilds the entire view from the event log — used both for fresh
   * sessions and for page reloads (the UI keeps no other state). */
  async attach(sessionId: string): Promise<void> {
    this.model = emptyModel();
    this.attached = sessionId;
    this.livePairsUntilTraining = null;
    await this.pump();
    if (this.pollTimeoutMs > 0) void this.pollLoop(sessionId);
  }

  /** Folds any events newer than what the model has seen, then re-renders. */
  async pump(): Promise<void> {
    if (!this.attached) return;
    const body = await this.api.events(this.attached, this.model.lastSeq);
    foldEvents(body.events, this.model);
    this.redraw();
  }

  private async pollLoop(sessionId: string): Promise<void> {
    if (this.polling) return;
    this.polling = true;
    try {
      while (this.attached === sessionId && !this.model.closed) {
        const body = await this.api.events(
          sessionId,
          this.model.lastSeq,
          this.pollTimeoutMs,
        );
        if (this.attached !== sessionId) return;
        if (body.events.length > 0) {
          foldEvents(body.events, this.model);
          this.redraw();
        }
      }
    } catch (error) {
      this.notice = describe(error);
      this.redraw();
    } finally {
      this.polling = false;
    }
  }

  redraw(): void {
    const ctx: RenderContext = {
      schemas: this.schemas,
      livePairsUntilTraining: this.livePairsUntilTraining,
      busy: this.busy,
      notice: this.notice,
      threshold: this.threshold,
      imageUrl: (sha256) => this.api.imageUrl(sha256),
    };
    this.mount.replaceChildren(render(this.doc, this.model, ctx));
  }

  private inputValue(id: string): string {
    const node = this.doc.getElementById(id) as HTMLInputElement | HTMLSelectElement | null;
    return node?.value ?? "";
  }

  private async onClick(event: Event): Promise<void> {
    const target = (event.target as HTMLElement | null)?.closest?.("[data-action]");
    if (!(target instanceof HTMLElement)) return;
    const action = target.getAttribute("data-action");
    switch (action) {
      case "start":
        await this.startSession();
        break;
      case "send":
        await this.sendAnswer();
        break;
      case "prefer":
        await this.prefer(
          Number(target.getAttribute("data-winner")),
          Number(target.getAttribute("data-loser")),
        );
        break;
      case "refine-dpo":
        await this.runAction(() => this.api.refine(this.requireSession(), { tool: "dpo" }));
        break;
      case "refine-aae":
        await this.runAction(() =>
          this.api.refine(this.requireSession(), {
            tool: "aae",
            params: { threshold: this.threshold },
          }),
        );
        break;
      default:
        break;
    }
  }

  private onChange(event: Event): void {
    const target = event.target as HTMLInputElement | null;
    if (target?.id === "threshold-slider") {
      this.threshold = Number(target.value);
      this.redraw();
    }
  }

  private requireSession(): string {
    if (!this.attached) throw new ApiError(0, "NoSession", "no session attached");
    return this.attached;
  }

  /** Optimistically disables the controls for the duration of one request;
   * the server's 409 RoundInFlight is the backstop. */
  private async runAction(action: () => Promise<unknown>): Promise<void> {
    if (this.busy) return;
    this.busy = true;
    this.notice = null;
    this.redraw();
    try {
      await action();
    } catch (error) {
      this.notice = describe(error);
    } finally {
      this.busy = false;
    }
    try {
      await this.pump();
    } catch (error) {
      this.notice = describe(error);
      this.redraw();
    }
  }

  async startSession(): Promise<void> {
    const schema = this.inputValue("schema-pick") || "default";
    const persona = this.inputValue("persona-pick").trim();
    const seedText = this.inputValue("seed-pick").trim();
    await this.runAction(async () => {
      const view = await this.api.createSession({
        schema,
        persona: persona === "" ? null : persona,
        ...(seedText === "" ? {} : { seed: Number(seedText) }),
      });
      await this.attach(view.id);
    });
  }

  async sendAnswer(): Promise<void> {
    const picked = this.inputValue("vocab-pick");
    const typed = this.inputValue("chat-input").trim();
    const words = picked || typed;
    if (!words) return;
    await this.runAction(() => this.api.sendMessage(this.requireSession(), words));
  }

  async prefer(winner: number, loser: number): Promise<void> {
    await this.runAction(async () => {
      const body = await this.api.sendPreference(this.requireSession(), winner, loser);
      this.livePairsUntilTraining = body.pairs_until_training;
    });
  }

  /** Convenience for scripted flows/tests: answer the open question. */
  currentQuestion(): string | null {
    return openQuestion(this.model)?.text ?? null;
  }
}

function describe(error: unknown): string {
  if (error instanceof ApiError) return `${error.code}: ${error.message}`;
  return error instanceof Error ? error.message : String(error);
}

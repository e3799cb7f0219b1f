// Session screen: the tutor's live view of a practice, test, or baseline
// session. Pure client of the HTTP API; one mutation in flight at a time.

import { ApiClient, ApiError } from "./api.js";
import type {
  AsyncReport,
  ImmediateReport,
  SessionPayload,
  StrategyPair,
  Utterance,
} from "./types.js";

export type Mode = "tutorup" | "baseline" | "test";

export interface ViewState {
  mode: Mode;
  session: SessionPayload;
  transcript: Utterance[];
  draft: string;
  pending: boolean;
  error: string | null;
  immediateReports: ImmediateReport[];
  asyncReports: AsyncReport[];
  baselinePairs: StrategyPair[] | null;
  baselineDraft: string;
  countdownSeconds: number | null;
  closed: boolean;
}

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string> = {},
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [key, value] of Object.entries(attrs)) node.setAttribute(key, value);
  if (text !== undefined) node.textContent = text;
  return node;
}

export function formatClock(totalSeconds: number): string {
  const safe = Math.max(0, Math.round(totalSeconds));
  const minutes = Math.floor(safe / 60);
  const seconds = safe % 60;
  return `${String(minutes).padStart(2, "0")}:${String(seconds).padStart(2, "0")}`;
}

export class SessionApp {
  readonly state: ViewState;
  private timer: ReturnType<typeof setInterval> | null = null;
  private readonly now: () => number;

  constructor(
    private readonly root: HTMLElement,
    private readonly api: ApiClient,
    session: SessionPayload,
    mode: Mode,
    options: { now?: () => number } = {},
  ) {
    this.now = options.now ?? (() => Date.now() / 1000);
    this.state = {
      mode,
      session,
      transcript: [...session.transcript],
      draft: "",
      pending: false,
      error: null,
      immediateReports: session.feedback_history.filter(
        (r): r is ImmediateReport => r.kind === "immediate",
      ),
      asyncReports: session.feedback_history.filter(
        (r): r is AsyncReport => r.kind === "async",
      ),
      baselinePairs: null,
      baselineDraft: "",
      countdownSeconds:
        mode === "test" ? (session.time_limit_seconds ?? 600) : null,
      closed: session.status === "closed",
    };
    if (mode === "test") this.startCountdown();
    this.render();
  }

  destroy(): void {
    if (this.timer !== null) clearInterval(this.timer);
  }

  private startCountdown(): void {
    const limit = this.state.session.time_limit_seconds ?? 600;
    const startedAt = this.now();
    this.timer = setInterval(() => {
      const remaining = limit - (this.now() - startedAt);
      this.state.countdownSeconds = remaining;
      const clock = this.root.querySelector('[data-panel="countdown"] .clock');
      if (clock) clock.textContent = formatClock(remaining);
      if (remaining <= 0) {
        this.state.closed = true;
        if (this.timer !== null) clearInterval(this.timer);
        this.render();
      }
    }, 1000);
  }

  private hasTutorTurn(): boolean {
    return this.state.transcript.some((u) => u.origin === "tutor_input");
  }

  private categoryTitle(categoryId: string): string {
    const match = this.state.session.scenario.matched_strategies.find(
      (s) => s.id === categoryId,
    );
    return match ? match.title : categoryId;
  }

  // ── actions ─────────────────────────────────────────────────────────

  async sendMessage(): Promise<void> {
    const text = this.state.draft.trim();
    if (!text || this.state.pending || this.state.closed) return;
    await this.mutate(async () => {
      const response = await this.api.postMessage(this.state.session.session_id, text);
      this.state.transcript = [
        ...this.state.transcript,
        {
          index: this.state.transcript.length,
          speaker: "Tutor",
          text,
          origin: "tutor_input",
        },
        ...response.utterances,
      ];
      this.state.draft = "";
    });
  }

  async clickBubble(utterance: Utterance): Promise<void> {
    if (utterance.origin !== "tutor_input") return; // student bubbles inert
    if (this.state.pending || this.state.closed) return;
    await this.mutate(async () => {
      const response = await this.api.rollback(
        this.state.session.session_id,
        utterance.index,
      );
      this.state.transcript = response.transcript;
      this.state.draft = response.recovered_text;
    });
  }

  async requestFeedback(kind: "immediate" | "async"): Promise<void> {
    if (this.state.pending || this.state.closed || !this.hasTutorTurn()) return;
    await this.mutate(async () => {
      if (kind === "immediate") {
        const { report } = await this.api.requestFeedback(
          this.state.session.session_id,
          "immediate",
        );
        this.state.immediateReports = [...this.state.immediateReports, report];
      } else {
        const { report } = await this.api.requestFeedback(
          this.state.session.session_id,
          "async",
        );
        this.state.asyncReports = [...this.state.asyncReports, report];
      }
    });
  }

  async resetSession(): Promise<void> {
    if (this.state.pending || this.state.closed) return;
    await this.mutate(async () => {
      const response = await this.api.reset(this.state.session.session_id);
      this.state.transcript = response.transcript;
    });
  }

  async submitBaseline(): Promise<void> {
    const text = this.state.baselineDraft.trim();
    if (!text || this.state.pending) return;
    await this.mutate(async () => {
      const response = await this.api.baselineSubmit(
        this.state.session.session_id,
        text,
      );
      this.state.baselinePairs = response.pairs;
    });
  }

  private async mutate(action: () => Promise<void>): Promise<void> {
    this.state.pending = true;
    this.state.error = null;
    this.render();
    try {
      await action();
    } catch (error) {
      // Keep the draft; surface the failure inline.
      this.state.error =
        error instanceof ApiError ? error.message : "request failed";
    } finally {
      this.state.pending = false;
      this.render();
    }
  }

  // ── rendering ───────────────────────────────────────────────────────

  render(): void {
    this.root.textContent = "";
    if (this.state.mode === "baseline") {
      this.renderBaseline();
    } else {
      this.renderSimulated();
    }
    if (this.state.error) {
      this.root.append(
        el("div", { "data-panel": "toast", class: "toast", role: "alert" }, this.state.error),
      );
    }
  }

  private renderSimulated(): void {
    const scenario = this.state.session.scenario;
    const left = el("div", { class: "column left" });
    const right = el("div", { class: "column right" });

    if (this.state.mode === "test") {
      const countdown = el("div", { "data-panel": "countdown", class: "countdown" });
      countdown.append(el("span", {}, "Time left "));
      countdown.append(
        el("span", { class: "clock" }, formatClock(this.state.countdownSeconds ?? 600)),
      );
      left.append(countdown);
    }

    const description = el("section", {
      "data-panel": "scenario-description",
      class: "panel",
    });
    description.append(el("h2", {}, scenario.theme.title));
    description.append(el("p", {}, scenario.theme.description));
    left.append(description);

    const problem = el("section", { "data-panel": "math-problem", class: "panel" });
    problem.append(el("h2", {}, "Math problem"));
    problem.append(el("p", {}, scenario.problem.statement));
    left.append(problem);

    const cards = el("section", { "data-panel": "student-cards", class: "panel" });
    cards.append(el("h2", {}, "Students"));
    for (const student of scenario.students) {
      const card = el("div", { class: "student-card", "data-student": student.name });
      card.append(el("h3", {}, `${student.name} (age ${student.age}, grade ${student.grade})`));
      card.append(el("p", {}, `Characteristics: ${student.characteristics.join(", ")}`));
      card.append(el("p", {}, `Knowledge: ${student.knowledge}`));
      cards.append(card);
    }
    left.append(cards);

    right.append(this.renderDialogue());
    right.append(this.renderInput());
    if (this.state.mode !== "test") {
      right.append(this.renderControls());
      right.append(this.renderImmediatePanel());
      right.append(this.renderAsyncPanel());
    }
    if (this.state.closed) {
      right.append(
        el("p", { "data-panel": "closed-note", class: "closed" }, "Session closed."),
      );
    }

    const layout = el("div", { class: "layout" });
    layout.append(left, right);
    this.root.append(layout);
  }

  private renderDialogue(): HTMLElement {
    const pane = el("section", { "data-panel": "dialogue", class: "panel dialogue" });
    pane.append(el("h2", {}, "Session"));
    const list = el("div", { class: "bubbles" });
    for (const utterance of this.state.transcript) {
      const isTutor = utterance.origin === "tutor_input";
      const bubble = el(
        "div",
        {
          class: `bubble ${isTutor ? "tutor" : "student"}`,
          "data-index": String(utterance.index),
          "data-origin": utterance.origin,
        },
      );
      bubble.append(el("span", { class: "speaker" }, `${utterance.speaker}: `));
      bubble.append(el("span", { class: "text" }, utterance.text));
      if (isTutor && this.state.mode !== "test") {
        bubble.classList.add("clickable");
        bubble.setAttribute("title", "Click to rewind to this point and edit");
        bubble.addEventListener("click", () => void this.clickBubble(utterance));
      }
      list.append(bubble);
    }
    pane.append(list);
    if (this.state.pending) {
      pane.append(el("p", { class: "generating" }, "students are typing..."));
    }
    return pane;
  }

  private renderInput(): HTMLElement {
    const wrap = el("section", { "data-panel": "input", class: "panel input" });
    const textarea = el("textarea", {
      placeholder: "Type your instruction to the students...",
      rows: "2",
    });
    textarea.value = this.state.draft;
    textarea.addEventListener("input", () => {
      this.state.draft = textarea.value;
      send.disabled = this.sendDisabled();
    });
    textarea.addEventListener("keydown", (event) => {
      if (event.key === "Enter" && !event.shiftKey) {
        event.preventDefault();
        void this.sendMessage();
      }
    });
    const send = el("button", { class: "send" }, "Send") as HTMLButtonElement;
    send.disabled = this.sendDisabled();
    send.addEventListener("click", () => void this.sendMessage());
    wrap.append(textarea, send);
    return wrap;
  }

  private sendDisabled(): boolean {
    return this.state.pending || this.state.closed || this.state.draft.trim() === "";
  }

  private renderControls(): HTMLElement {
    const controls = el("section", { class: "panel controls" });
    const reset = el("button", { "data-panel": "reset", class: "reset" }, "Reset") as HTMLButtonElement;
    reset.disabled = this.state.pending || this.state.closed;
    reset.addEventListener("click", () => void this.resetSession());
    controls.append(reset);
    return controls;
  }

  private renderImmediatePanel(): HTMLElement {
    const panel = el("section", { "data-panel": "immediate-feedback", class: "panel feedback" });
    const button = el("button", { class: "get-immediate" }, "Get Immediate Feedback") as HTMLButtonElement;
    button.disabled = this.state.pending || this.state.closed || !this.hasTutorTurn();
    button.addEventListener("click", () => void this.requestFeedback("immediate"));
    panel.append(button);
    for (const report of this.state.immediateReports) {
      const card = el("div", { class: "immediate-card" });
      card.append(el("p", { class: "situation" }, report.situation));
      const chips = el("div", { class: "chips" });
      for (const recommendation of report.recommendations) {
        const chip = el("span", { class: "chip", "data-category": recommendation.category_id });
        chip.append(el("strong", {}, this.categoryTitle(recommendation.category_id)));
        chip.append(el("span", {}, ` ${recommendation.advice}`));
        chips.append(chip);
      }
      card.append(chips);
      panel.append(card);
    }
    return panel;
  }

  private renderAsyncPanel(): HTMLElement {
    const panel = el("section", { "data-panel": "async-feedback", class: "panel feedback" });
    const button = el("button", { class: "get-async" }, "Get Asynchronous Feedback") as HTMLButtonElement;
    button.disabled = this.state.pending || this.state.closed || !this.hasTutorTurn();
    button.addEventListener("click", () => void this.requestFeedback("async"));
    panel.append(button);
    for (const report of this.state.asyncReports) {
      const accordion = el("div", { class: "async-accordion" });
      accordion.append(this.stage("Overview", report.overview));
      const reflection = report.reflection
        .map((entry) => `${entry.persona} (${entry.dimensions.join(", ")}): ${entry.analysis}`)
        .join("\n");
      accordion.append(this.stage("Reflection", reflection));
      accordion.append(this.stage("Theory", report.theory));
      accordion.append(this.stage("Preparation", report.preparation.map((s) => `- ${s}`).join("\n")));
      panel.append(accordion);
    }
    return panel;
  }

  private stage(label: string, body: string): HTMLElement {
    const section = el("details", { class: "stage", "data-stage": label });
    section.append(el("summary", {}, label));
    section.append(el("p", {}, body));
    return section;
  }

  private renderBaseline(): void {
    const scenario = this.state.session.scenario;
    const layout = el("div", { class: "layout" });

    const info = el("section", { "data-panel": "baseline-info", class: "panel" });
    info.append(el("h2", {}, scenario.theme.title));
    info.append(el("p", {}, scenario.theme.description));
    info.append(el("p", {}, scenario.problem.statement));
    for (const student of scenario.students) {
      info.append(
        el(
          "p",
          { "data-student": student.name },
          `${student.name} (age ${student.age}, grade ${student.grade}) — ` +
            `${student.characteristics.join(", ")}; ${student.knowledge}`,
        ),
      );
    }

    const task = el("section", { "data-panel": "baseline-task", class: "panel" });
    task.append(el("h2", {}, "Your task"));
    task.append(
      el(
        "p",
        {},
        "Read the scenario on the left and write down the teaching strategies " +
          "you would use to engage these students.",
      ),
    );
    const textarea = el("textarea", { rows: "6", placeholder: "Your strategies..." });
    textarea.value = this.state.baselineDraft;
    textarea.addEventListener("input", () => {
      this.state.baselineDraft = textarea.value;
      submit.disabled = this.state.pending || textarea.value.trim() === "";
    });
    const submit = el("button", { class: "baseline-submit" }, "Get Feedback") as HTMLButtonElement;
    submit.disabled = this.state.pending || this.state.baselineDraft.trim() === "";
    submit.addEventListener("click", () => void this.submitBaseline());
    task.append(textarea, submit);

    const feedback = el("section", { "data-panel": "baseline-feedback", class: "panel" });
    feedback.append(el("h2", {}, "Scenario-strategy pairs"));
    if (this.state.baselinePairs === null) {
      feedback.append(el("p", { class: "placeholder" }, "Submit your strategies to see the matched pairs."));
    } else {
      const table = el("table", { class: "pairs" });
      const head = el("tr", {});
      head.append(el("th", {}, "Scenario"), el("th", {}, "Strategy"), el("th", {}, "Examples"));
      table.append(head);
      for (const pair of this.state.baselinePairs) {
        const row = el("tr", {});
        row.append(el("td", {}, pair.scenario));
        row.append(el("td", {}, pair.strategy));
        row.append(el("td", {}, pair.instances.join("; ")));
        table.append(row);
      }
      feedback.append(table);
    }

    layout.append(info, task, feedback);
    this.root.append(layout);
  }
}

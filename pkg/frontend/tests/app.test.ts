import { beforeEach, describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import { formatClock, SessionApp, type Mode } from "../src/app.js";
import { renderScenarioSelect } from "../src/main.js";
import { MockService, SCENARIO } from "./mock_service.js";

let service: MockService;
let api: ApiClient;
let root: HTMLElement;

beforeEach(() => {
  service = new MockService();
  api = new ApiClient("/api/v1", service.fetch);
  document.body.innerHTML = '<div id="app"></div>';
  root = document.getElementById("app") as HTMLElement;
});

async function startSession(mode: Mode = "tutorup"): Promise<SessionApp> {
  const condition = mode === "baseline" ? "baseline" : "tutorup";
  const session = await api.createSession(
    SCENARIO.theme.id,
    SCENARIO.problem.id,
    condition,
    mode === "test",
  );
  return new SessionApp(root, api, session, mode);
}

function panel(name: string): HTMLElement | null {
  return root.querySelector(`[data-panel="${name}"]`);
}

function bubbles(): HTMLElement[] {
  return Array.from(root.querySelectorAll(".bubble"));
}

async function flush(): Promise<void> {
  await new Promise((resolve) => setTimeout(resolve, 0));
}

describe("panel inventory", () => {
  it("renders the scenario selection screen", async () => {
    const listing = await api.listScenarios();
    renderScenarioSelect(root, listing, () => {});
    expect(panel("scenario-select")).not.toBeNull();
    expect(root.textContent).toContain("Varying Learning Paces");
  });

  it("renders every simulated-session panel", async () => {
    const app = await startSession();
    for (const name of [
      "scenario-description",
      "math-problem",
      "student-cards",
      "dialogue",
      "input",
      "immediate-feedback",
      "reset",
      "async-feedback",
    ]) {
      expect(panel(name), name).not.toBeNull();
    }
    // Clickable tutor bubbles: none yet, but the dialogue starts with the
    // scene-setting line.
    expect(bubbles()).toHaveLength(1);
    app.destroy();
  });

  it("student cards show public fields only", async () => {
    const app = await startSession();
    const cards = panel("student-cards")!;
    expect(cards.textContent).toContain("Lily");
    expect(cards.textContent).toContain("quick learner");
    expect(cards.textContent).toContain("good grasp");
    expect(root.innerHTML).not.toContain("initial_behavior");
    app.destroy();
  });

  it("baseline mode shows exactly the three static panels", async () => {
    const app = await startSession("baseline");
    expect(panel("baseline-task")).not.toBeNull();
    expect(panel("baseline-info")).not.toBeNull();
    expect(panel("baseline-feedback")).not.toBeNull();
    expect(panel("dialogue")).toBeNull();
    expect(panel("input")).toBeNull();
    expect(panel("reset")).toBeNull();
    app.destroy();
  });
});

describe("messaging", () => {
  it("first greeting produces three student bubbles", async () => {
    const app = await startSession();
    app.state.draft = "Hello everyone!";
    await app.sendMessage();
    const speakers = bubbles().map((b) => b.querySelector(".speaker")!.textContent);
    expect(speakers).toEqual(["Lily: ", "Tutor: ", "Lily: ", "James: ", "Chloe: "]);
    app.destroy();
  });

  it("send button disabled when the draft is empty", async () => {
    const app = await startSession();
    const send = panel("input")!.querySelector("button") as HTMLButtonElement;
    expect(send.disabled).toBe(true);
    const textarea = panel("input")!.querySelector("textarea") as HTMLTextAreaElement;
    textarea.value = "Hi!";
    textarea.dispatchEvent(new Event("input"));
    expect(send.disabled).toBe(false);
    app.destroy();
  });

  it("a 502 shows a toast and preserves the draft", async () => {
    const app = await startSession();
    service.failNextMessage = true;
    app.state.draft = "Hello everyone!";
    await app.sendMessage();
    expect(panel("toast")!.textContent).toContain("chat backend failed");
    const textarea = panel("input")!.querySelector("textarea") as HTMLTextAreaElement;
    expect(textarea.value).toBe("Hello everyone!");
    expect(bubbles()).toHaveLength(1); // nothing appended
    app.destroy();
  });

  it("only one mutation is in flight at a time", async () => {
    const app = await startSession();
    app.state.draft = "Hello everyone!";
    const first = app.sendMessage();
    // While pending, a second send is a no-op.
    app.state.draft = "Second message";
    expect(app.state.pending).toBe(true);
    await app.sendMessage();
    await first;
    await flush();
    const posts = service.requests.filter((r) => r.endsWith("/messages"));
    expect(posts).toHaveLength(1);
    app.destroy();
  });
});

describe("rollback via tutor bubbles", () => {
  it("clicking a tutor bubble truncates the view and prefills the input", async () => {
    const app = await startSession();
    app.state.draft = "Hello everyone!";
    await app.sendMessage();
    expect(bubbles()).toHaveLength(5);

    const tutorBubble = bubbles().find((b) => b.dataset.origin === "tutor_input")!;
    expect(tutorBubble.classList.contains("clickable")).toBe(true);
    tutorBubble.click();
    await flush();

    expect(bubbles()).toHaveLength(1); // back to the initial line
    const textarea = panel("input")!.querySelector("textarea") as HTMLTextAreaElement;
    expect(textarea.value).toBe("Hello everyone!");
    app.destroy();
  });

  it("student bubbles are not clickable", async () => {
    const app = await startSession();
    app.state.draft = "Hello everyone!";
    await app.sendMessage();
    const studentBubble = bubbles().find((b) => b.dataset.origin === "student_agent")!;
    expect(studentBubble.classList.contains("clickable")).toBe(false);
    studentBubble.click();
    await flush();
    expect(bubbles()).toHaveLength(5); // unchanged
    app.destroy();
  });
});

describe("feedback panels", () => {
  it("buttons disabled before any tutor turn", async () => {
    const app = await startSession();
    const immediate = panel("immediate-feedback")!.querySelector("button") as HTMLButtonElement;
    const asyncButton = panel("async-feedback")!.querySelector("button") as HTMLButtonElement;
    expect(immediate.disabled).toBe(true);
    expect(asyncButton.disabled).toBe(true);
    app.destroy();
  });

  it("immediate feedback renders chips from matched categories", async () => {
    const app = await startSession();
    app.state.draft = "Hello everyone!";
    await app.sendMessage();
    await app.requestFeedback("immediate");
    const chips = Array.from(root.querySelectorAll(".chip"));
    expect(chips).toHaveLength(1);
    expect(chips[0]!.getAttribute("data-category")).toBe("group-work");
    expect(chips[0]!.textContent).toContain("Promote group work");
    expect(panel("immediate-feedback")!.textContent).toContain("Lily is bored");
    app.destroy();
  });

  it("async feedback renders a four-section accordion", async () => {
    const app = await startSession();
    app.state.draft = "Hello everyone!";
    await app.sendMessage();
    await app.requestFeedback("async");
    const stages = Array.from(root.querySelectorAll("[data-stage]")).map((s) =>
      s.getAttribute("data-stage"),
    );
    expect(stages).toEqual(["Overview", "Reflection", "Theory", "Preparation"]);
    expect(panel("async-feedback")!.textContent).toContain("Assign roles early.");
    app.destroy();
  });
});

describe("test mode", () => {
  it("hides reset and feedback, shows a 10:00 countdown", async () => {
    const app = await startSession("test");
    expect(panel("reset")).toBeNull();
    expect(panel("immediate-feedback")).toBeNull();
    expect(panel("async-feedback")).toBeNull();
    const countdown = panel("countdown")!;
    expect(countdown.querySelector(".clock")!.textContent).toBe("10:00");
    // Dialogue and input still present: the test is a live session.
    expect(panel("dialogue")).not.toBeNull();
    expect(panel("input")).not.toBeNull();
    // Tutor bubbles are not clickable in test mode (no rewind during tests).
    app.state.draft = "Hello everyone!";
    await app.sendMessage();
    const tutorBubble = bubbles().find((b) => b.dataset.origin === "tutor_input")!;
    expect(tutorBubble.classList.contains("clickable")).toBe(false);
    app.destroy();
  });

  it("formats the clock as mm:ss", () => {
    expect(formatClock(600)).toBe("10:00");
    expect(formatClock(61)).toBe("01:01");
    expect(formatClock(0)).toBe("00:00");
    expect(formatClock(-5)).toBe("00:00");
  });
});

describe("baseline flow", () => {
  it("submits free text and renders the strategy table", async () => {
    const app = await startSession("baseline");
    const textarea = panel("baseline-task")!.querySelector("textarea") as HTMLTextAreaElement;
    const submit = panel("baseline-task")!.querySelector("button") as HTMLButtonElement;
    expect(submit.disabled).toBe(true);
    textarea.value = "I would assign roles and a timer.";
    textarea.dispatchEvent(new Event("input"));
    expect(submit.disabled).toBe(false);
    await app.submitBaseline();
    const table = panel("baseline-feedback")!.querySelector("table")!;
    expect(table.textContent).toContain("Promote group work");
    expect(table.textContent).toContain("Set time constraint");
    const rows = table.querySelectorAll("tr");
    expect(rows).toHaveLength(3); // header + two matched pairs
    app.destroy();
  });
});

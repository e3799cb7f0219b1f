// Mirrors of the /api/v1 payload schemas (see docs/api.md).

export type Origin = "initial" | "tutor_input" | "student_agent";

export interface Utterance {
  index: number;
  speaker: string;
  text: string;
  origin: Origin;
}

export interface StudentCard {
  name: string;
  age: number;
  grade: number;
  characteristics: string[];
  knowledge: string;
}

export interface StrategyCategory {
  id: string;
  title: string;
  instances: string[];
}

export interface ScenarioPayload {
  theme: {
    id: string;
    title: string;
    description: string;
    reactive_examples: string[];
  };
  problem: { id: string; statement: string };
  students: StudentCard[];
  matched_strategies: StrategyCategory[];
}

export interface Recommendation {
  category_id: string;
  advice: string;
}

export interface ImmediateReport {
  kind: "immediate";
  at_index: number;
  situation: string;
  recommendations: Recommendation[];
}

export interface ReflectionEntry {
  persona: string;
  dimensions: string[];
  analysis: string;
}

export interface AsyncReport {
  kind: "async";
  at_index: number;
  overview: string;
  reflection: ReflectionEntry[];
  theory: string;
  preparation: string[];
}

export type FeedbackReport = ImmediateReport | AsyncReport;

export interface SessionPayload {
  session_id: string;
  condition: "tutorup" | "baseline";
  test_mode: boolean;
  status: "open" | "closed";
  created_at: number;
  scenario: ScenarioPayload;
  transcript: Utterance[];
  phase: string | null;
  feedback_history: FeedbackReport[];
  time_limit_seconds?: number;
}

export interface ScenarioListPayload {
  scenarios: ScenarioPayload[];
  problems: { id: string; statement: string }[];
}

export interface StrategyPair {
  scenario: string;
  strategy: string;
  instances: string[];
}

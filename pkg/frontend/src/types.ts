// Wire types for the chat service JSON API.

export interface CreateSessionResponse {
  session_id: string;
}

export interface MessageResponse {
  reply: string;
  turn_id: number;
}

export interface HealthResponse {
  status: string;
  items: number;
}

export interface ApiErrorBody {
  code: string;
  message: string;
}

export interface PlanStep {
  tool: string;
  input: string;
}

export interface ToolCallRecord {
  tool_name: string;
  tool_input: string;
  output_summary: {
    remaining?: number;
    error?: string | null;
    warnings?: string[];
    titles?: string[];
    note?: string;
    detail?: string;
    schema_used?: string;
    [key: string]: unknown;
  };
}

export interface Judgment {
  verdict: "positive" | "negative";
  feedback: string;
  synthetic: boolean;
}

export interface Attempt {
  plan: PlanStep[];
  plan_text: string;
  records: ToolCallRecord[];
  judgment: Judgment | null;
  response: string | null;
  direct_answer: string | null;
  reflection_in: string[];
}

export interface TurnTrace {
  trace_version: number;
  turn_id: number;
  user_text: string;
  response: string;
  actor_calls: number;
  critic_calls: number;
  gave_up: boolean;
  attempts: Attempt[];
}

export const SUPPORTED_TRACE_VERSION = 1;

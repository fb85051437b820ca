export interface Recommendation {
  item_id: number;
  name: string;
  score: number;
}

export interface ConverseResponse {
  response: string;
  recommendations: Recommendation[];
  turn: number;
}

export interface ChatTurn {
  role: "user" | "system";
  text: string;
  recommendations: Recommendation[];
}

#include "multimage/generation.hpp"

namespace multimage {

namespace {

// Kept byte-for-byte; the acceptance suite pins their SHA-256.
constexpr std::string_view kLlavaStyle = R"tpl(You are an AI visual assistant that can analyze multiple images. You receive four to five images with their corresponding captions in an array. The task is to use the provided images and captions to create a challenging and complex question that involves comparison, ranking, storytelling, or logical reasoning across the images and then provide a detailed answer. The question should require a deep understanding of the visual content and advanced reasoning based on that content.

Create questions that ask to compare elements across the images, such as identifying which image best represents a critical or turning point moment, quality, or characteristic; formulate questions that require ranking the images based on intricate and plausible criteria, such as strategic importance, sequence, or visual impact; develop questions that involve piecing together a narrative from the images, understanding a sophisticated sequence of events, or explaining a complex progression shown; and ask questions that require advanced logical reasoning to deduce why certain elements are present, the purpose behind actions shown, or the broader implications of what is depicted.

Frame a question that requires advanced analyzing and reasoning about the images and their captions, and provide a detailed answer based on the visual content and captions, explaining the reasoning process and the conclusions drawn. Also, provide 3-4 follow-up questions to deepen the analysis based on the potential responses, and provide detailed answers for the follow-up questions as well.

Example questions include:
- "Which image best represents the pivotal turning point of the event, and why?"
- "Rank the images based on the strategic importance of the actions shown, from highest to lowest."
- "How do the images collectively tell the intricate story of the event, and what can be inferred about the key strategic moments?"
- "What could be the underlying reasons behind the specific actions taken in each image, and how do they relate to the overall context in a broader sense?"

Example follow-up questions include:
- "Why do you think the turning point identified in Image (image number) was critical to the outcome of the event?"
- "Which image best represents the pivotal turning point of the event?\n (A) Image 1\n (B) Image 2\n (C) Image 3\n (D) Image 4\n Answer with the letter only."
- "How many people are in all the images?\nBegin with your reasoning, and then state your final count prefaced by \"Answer:\""
- "What additional details in Image (image number) support your interpretation of the story?"

Return your challenging and complex question and follow-up questions in the format:
"User: [INSERT QUESTION], Assistant: [INSERT ANSWER]
User: [INSERT FOLLOW-UP QUESTION 1], Assistant: [INSERT FOLLOW-UP ANSWER 1]
User: [INSERT FOLLOW-UP QUESTION 2], Assistant: [INSERT FOLLOW-UP ANSWER 2]
User: [INSERT FOLLOW-UP QUESTION 3], Assistant: [INSERT FOLLOW-UP ANSWER 3]...")tpl";

constexpr std::string_view kLongForm = R"tpl(You are an AI visual assistant capable of analyzing multiple images, including both visual content and textual elements using Optical Character Recognition (OCR). You will receive four to five images, each potentially accompanied by captions and containing text, numbers, signs, or other recognizable characters. Your task is to create a plausible and challenging question that involves comparison, ranking, storytelling, logical reasoning, or detailed textual analysis across the images, and then provide a detailed answer.

For Visual Analysis: Frame questions that require understanding and reasoning about the visual content, such as comparing elements across images, identifying which image best represents a specific moment, quality, or characteristic, ranking the images based on logical and plausible criteria (e.g., importance, sequence, or visual quality), or piecing together a narrative from the images to explain a sequence of events or the progression shown. Your questions should encourage deep engagement with the visual content and require advanced reasoning or interpretation.

For OCR-Based Analysis: Frame questions that require detailed analysis of the textual content in the images, such as counting specific items or words, identifying differences or similarities between the images, verifying the accuracy of information, or deducing logical conclusions based on the textual data. Your questions should encourage users to engage deeply with the textual content and require precise reasoning or interpretation.

Question Creation: Create a question that requires analyzing and reasoning about the images and their captions or textual elements. Provide a detailed answer based on the visual content, captions, and/or OCR analysis, explaining the reasoning process and conclusions drawn.

Follow-Up Questions: Additionally, include 3-4 follow-up questions that delve deeper into the analysis based on the initial question. Provide detailed answers for each follow-up question, further expanding on the reasoning and conclusions.

Example Questions:
- "Which image best represents the climax of the event, and why?"
- "Rank the images based on the level of engagement of the individuals shown, from highest to lowest."
- "How many times does the word \"urgent\" appear across all images, and in which image is it most prominently displayed?"
- "Identify whether all the images contain the same warning label. If there are differences, describe them."

Example Follow-Up Questions:
- "Why do you think the climax identified in Image (image number) was critical to the outcome of the event?"
- "How do the textual differences in Image (image number) affect your understanding of the event's context?"
- "What additional visual details in Image (image number) support your interpretation of the story?"
- "How does the sequence of numbers in these images relate to the broader narrative depicted?"

Format: Return your challenging and complex question, detailed answer, and follow-up questions in the following format:
"User: [INSERT QUESTION], Assistant: [INSERT ANSWER]
User: [INSERT FOLLOW-UP QUESTION 1], Assistant: [INSERT FOLLOW-UP ANSWER 1]
User: [INSERT FOLLOW-UP QUESTION 2], Assistant: [INSERT FOLLOW-UP ANSWER 2]
User: [INSERT FOLLOW-UP QUESTION 3], Assistant: [INSERT FOLLOW-UP ANSWER 3]...")tpl";

}  // namespace

const PromptTemplate& prompt_template(TemplateName name) {
  static const PromptTemplate llava{TemplateName::kLlavaStyle, kLlavaStyle};
  static const PromptTemplate long_form{TemplateName::kLongForm, kLongForm};
  return name == TemplateName::kLlavaStyle ? llava : long_form;
}

}  // namespace multimage
